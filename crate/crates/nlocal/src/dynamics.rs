//! Driven-coupler detection protocol.
//!
//! The static fit of [`crate::fit`] needs spectral resolution that shrinks
//! exponentially with the register size. The dynamic alternative simulated
//! here drives the n-local coupler harmonically at the gap between the ground
//! state and the most excited state. A transition between those two states is
//! first-order forbidden for every lower-locality drive term, so a growing
//! population in the most excited state witnesses a genuine n-local coupling.
//!
//! The open-system evolution integrates the Lindblad equation
//!
//! ```text
//! dρ/dt = -i[H(t), ρ] + Σ_i ( C_i ρ C_i† - ½{C_i† C_i, ρ} )
//! ```
//!
//! with `H(t) = H_static + cos(ωt) · D` and per-spin collapse operators for
//! energy decay, `√γ |-⟩⟨+|`, and pure dephasing, `√(γ/2) X`, both at rate
//! `γ = 1/T₂`. Every operator in the model family is real in the
//! computational basis, so ρ is carried as a real pair (A, B) with A = Re ρ
//! symmetric and B = Im ρ antisymmetric; Hermiticity is then structural
//! rather than a numerical accident.
//!
//! Internally the state lives in the product X basis (the Hadamard frame),
//! where the decoherence channels collapse to closed forms: dephasing and the
//! decay anticommutator become elementwise masks built from Hamming weights,
//! and the decay jump becomes one scaled block copy per spin. The driven
//! n-local Z string becomes the index-complement permutation there, so the
//! drive adds a reversed-row rank-style update instead of a second dense
//! product. Inputs and the reported populations keep their stated bases; the
//! frame never leaks through the interface.

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::{add_x_string, add_z_string, default_spec, realize_static, spin_mask, SpinSystemSpec};
use crate::pauli::{Axis, PauliString, ProductXState, Subset, XSign, MAX_SPINS};
use crate::seed;

/// Integration steps per period of the fastest declared time scale.
pub const DEFAULT_STEP_DIVISOR: usize = 50;
/// Output sampling interval in ns.
pub const DEFAULT_SAMPLE_INTERVAL: f64 = 1.0;
/// Evolution window in ns used by the coherence-time study.
pub const DEFAULT_WINDOW_NS: f64 = 1000.0;
/// Coherence-time grid in ns used by the coherence-time study.
pub const DEFAULT_T2_GRID_NS: [f64; 5] = [10.0, 30.0, 100.0, 300.0, 1000.0];
/// Trace drift beyond this aborts a run as an integrator failure.
pub const TRACE_TOLERANCE: f64 = 1e-4;
/// Slack allowed on population positivity and purity before a run is flagged.
pub const POSITIVITY_TOLERANCE: f64 = 1e-8;

/// Harmonic drive turned on at t = 0: `cos(omega t) · (m Z^⊗n + Σ a_k P_k)`.
///
/// The n-local coupler term is the `m` amplitude; `driven_terms` carries any
/// lower-locality strings that oscillate along with it.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveSpec {
    /// Amplitude of the driven n-local Z string (rad/ns).
    pub m: f64,
    /// Drive angular frequency (rad/ns), normally [`resonant_frequency`].
    pub omega: f64,
    /// Additional oscillating strings with their amplitudes (rad/ns).
    pub driven_terms: Vec<(PauliString, f64)>,
}

impl DriveSpec {
    /// Drive with the n-local term alone.
    pub fn coupler_only(m: f64, omega: f64) -> Self {
        DriveSpec {
            m,
            omega,
            driven_terms: Vec::new(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !self.omega.is_finite() || self.omega <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "drive frequency must be finite and positive, got {}",
                self.omega
            )));
        }
        if !self.m.is_finite() {
            return Err(Error::InvalidParameter("non-finite drive amplitude".into()));
        }
        for (string, amp) in &self.driven_terms {
            if string.n() != n {
                return Err(Error::DimensionMismatch(format!(
                    "driven term {string} is sized for {} spins, system has {n}",
                    string.n()
                )));
            }
            if string.axis() == Axis::X && string.weight() == n {
                return Err(Error::InvalidSubset(
                    "an X string on the full register is outside the model family".into(),
                ));
            }
            if !amp.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite amplitude on driven term {string}"
                )));
            }
        }
        Ok(())
    }

    /// Dense realization of the driven operator (without the cosine factor).
    fn realize(&self, n: usize) -> DMatrix<f64> {
        let dim = 1usize << n;
        let mut d = DMatrix::<f64>::zeros(dim, dim);
        if self.m != 0.0 {
            add_z_string(&mut d, spin_mask(&Subset::full(n), n), self.m);
        }
        for (string, amp) in &self.driven_terms {
            if *amp == 0.0 {
                continue;
            }
            let mask = spin_mask(string.subset(), n);
            match string.axis() {
                Axis::X => add_x_string(&mut d, mask, *amp),
                Axis::Z => add_z_string(&mut d, mask, *amp),
            }
        }
        d
    }

    fn total_amplitude(&self) -> f64 {
        self.m.abs() + self.driven_terms.iter().map(|(_, a)| a.abs()).sum::<f64>()
    }
}

/// Per-spin decoherence channels with equal decay and dephasing rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LindbladSpec {
    /// Coherence time T₂ in ns; the per-spin rate is `1/t2`.
    pub t2: f64,
    pub include_decay: bool,
    pub include_dephasing: bool,
}

impl LindbladSpec {
    pub fn new(t2: f64, include_decay: bool, include_dephasing: bool) -> Result<Self> {
        if t2.is_nan() || t2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "coherence time must be positive, got {t2}"
            )));
        }
        Ok(LindbladSpec {
            t2,
            include_decay,
            include_dephasing,
        })
    }

    /// Both channels open at rate 1/t2.
    pub fn both(t2: f64) -> Result<Self> {
        LindbladSpec::new(t2, true, true)
    }

    /// No decoherence at all; evolution stays unitary.
    pub fn closed() -> Self {
        LindbladSpec {
            t2: f64::INFINITY,
            include_decay: false,
            include_dephasing: false,
        }
    }

    /// Per-spin rate γ = 1/T₂ in 1/ns.
    pub fn gamma(&self) -> f64 {
        if self.include_decay || self.include_dephasing {
            1.0 / self.t2
        } else {
            0.0
        }
    }
}

/// Fixed-step RK4 controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// The step is at most `min(2π/ω, T₂, 1/Σ|amplitudes|) / step_divisor`.
    pub step_divisor: usize,
    /// Population output spacing in ns; the realized step divides it exactly.
    pub sample_interval: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            step_divisor: DEFAULT_STEP_DIVISOR,
            sample_interval: DEFAULT_SAMPLE_INTERVAL,
        }
    }
}

impl IntegratorConfig {
    fn validate(&self) -> Result<()> {
        if self.step_divisor == 0 {
            return Err(Error::InvalidParameter("step divisor must be >= 1".into()));
        }
        if !self.sample_interval.is_finite() || self.sample_interval <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sample interval must be finite and positive, got {}",
                self.sample_interval
            )));
        }
        Ok(())
    }
}

/// Starting state of an evolution run.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Pure product state of single-spin X eigenstates.
    Product(ProductXState),
    /// Explicit density matrix ρ = real + i·imag in the computational basis.
    Density { real: DMatrix<f64>, imag: DMatrix<f64> },
}

impl From<ProductXState> for InitialState {
    fn from(state: ProductXState) -> Self {
        InitialState::Product(state)
    }
}

impl InitialState {
    /// Validate (in the stated computational basis) and hand back the real
    /// pair already rotated into the X frame.
    fn into_x_parts(self, n: usize, frame: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let dim = 1usize << n;
        match self {
            InitialState::Product(state) => {
                if state.n() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "initial state has {} spins, system has {n}",
                        state.n()
                    )));
                }
                // a product X state is a frame basis vector
                let x = x_index_of_label(state.minus_bitmask() as usize, n);
                let mut a = DMatrix::zeros(dim, dim);
                a[(x, x)] = 1.0;
                Ok((a, DMatrix::zeros(dim, dim)))
            }
            InitialState::Density { real, imag } => {
                if real.nrows() != dim || real.ncols() != dim || imag.nrows() != dim || imag.ncols() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "initial density must be {dim} x {dim}"
                    )));
                }
                let finite = real.iter().chain(imag.iter()).all(|v| v.is_finite());
                if !finite {
                    return Err(Error::InvalidParameter("non-finite initial density".into()));
                }
                let sym = (&real - real.transpose()).amax();
                let asym = (&imag + imag.transpose()).amax();
                if sym > 1e-9 || asym > 1e-9 {
                    return Err(Error::InvalidParameter(
                        "initial density is not Hermitian".into(),
                    ));
                }
                if (real.trace() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "initial density has trace {}, expected 1",
                        real.trace()
                    )));
                }
                Ok((frame * real * frame, frame * imag * frame))
            }
        }
    }
}

/// Time-resolved populations in the labeled measurement basis plus the scalar
/// state contrast of one run.
///
/// Populations are taken in the exact eigenbasis of the coupler-off static
/// Hamiltonian, ordered by ascending energy. Each eigenstate is labeled by
/// its maximum-overlap product X state (greedily, uniquely), and
/// `labels[k]` holds that state's minus-spin bitmask. `target_index` is the
/// eigenstate labeled |+⟩^⊗n, `excluded_index` the one labeled |-⟩^⊗n.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastReport {
    /// Sample times in ns.
    pub time_grid: Vec<f64>,
    /// `populations[t][k]` = population of eigenstate k at sample t.
    pub populations: Vec<Vec<f64>>,
    /// Minus-spin bitmask of the product X label of each eigenstate.
    pub labels: Vec<u32>,
    /// max_t P_target - max over t and every state except target/excluded.
    pub contrast: f64,
    pub target_index: usize,
    pub excluded_index: usize,
    /// Largest |trace(ρ) - 1| seen at any sample.
    pub trace_error: f64,
    /// Largest Hermiticity defect at any sample; the split (A, B) state
    /// representation keeps this at exactly zero.
    pub hermiticity_error: f64,
    /// False when a sample had a population below -tolerance or purity above
    /// 1 + tolerance, the cheap necessary conditions for positivity.
    pub positive: bool,
    /// Realized integration step in ns.
    pub step: f64,
}

impl ContrastReport {
    /// Time series as `t_ns,pop_0,..,pop_{2^n - 1}` rows.
    pub fn write_timeseries_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t_ns")?;
        for k in 0..self.labels.len() {
            write!(w, ",pop_{k}")?;
        }
        writeln!(w)?;
        for (t, row) in self.time_grid.iter().zip(&self.populations) {
            write!(w, "{t:.16e}")?;
            for p in row {
                write!(w, ",{p:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Gap between the ground state and the most excited state of the coupler-off
/// static Hamiltonian, the drive frequency that maximizes the target
/// transition. Intended at the protocol operating point ε = 0, where it is
/// exactly 2nδ for equal transverse fields and no couplings.
pub fn resonant_frequency(spec: &SpinSystemSpec) -> Result<f64> {
    let h = realize_static(&spec.with_coupler(false))?;
    let eigs = h.symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for e in eigs.iter() {
        lo = lo.min(*e);
        hi = hi.max(*e);
    }
    Ok(hi - lo)
}

/// Eigenbasis of the coupler-off static Hamiltonian with product-X labels,
/// held in the X frame like the evolving state.
struct MeasurementBasis {
    /// Eigenvectors as columns, ascending eigenvalue, X-frame components.
    vectors: DMatrix<f64>,
    /// Minus-spin bitmask of the assigned product X label per eigenstate.
    labels: Vec<u32>,
    target: usize,
    excluded: usize,
}

impl MeasurementBasis {
    fn build(spec: &SpinSystemSpec, frame: &DMatrix<f64>) -> Result<Self> {
        let n = spec.n;
        let dim = 1usize << n;
        let h = realize_static(&spec.with_coupler(false))?;
        let eig = nalgebra::SymmetricEigen::new(frame * h * frame);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|a, b| {
            eig.eigenvalues[*a]
                .partial_cmp(&eig.eigenvalues[*b])
                .expect("finite eigenvalues")
        });
        let mut vectors = DMatrix::<f64>::zeros(dim, dim);
        for (to, from) in order.iter().enumerate() {
            vectors.set_column(to, &eig.eigenvectors.column(*from));
        }

        // Squared overlaps of every product X state (row) with every
        // eigenvector (column): in this frame the product states are the
        // canonical basis, so overlaps are squared vector components.
        let mut overlap = DMatrix::<f64>::zeros(dim, dim);
        for label in 0..dim {
            let x = x_index_of_label(label, n);
            for col in 0..dim {
                let component = vectors[(x, col)];
                overlap[(label, col)] = component * component;
            }
        }

        // Greedy unique assignment: repeatedly take the largest remaining
        // overlap. Ties resolve to the smallest (label, eigenstate) pair.
        let mut label_of = vec![usize::MAX; dim];
        let mut label_used = vec![false; dim];
        let mut eig_used = vec![false; dim];
        for _ in 0..dim {
            let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
            for l in 0..dim {
                if label_used[l] {
                    continue;
                }
                for e in 0..dim {
                    if !eig_used[e] && overlap[(l, e)] > best.0 {
                        best = (overlap[(l, e)], l, e);
                    }
                }
            }
            label_used[best.1] = true;
            eig_used[best.2] = true;
            label_of[best.2] = best.1;
        }
        let labels: Vec<u32> = label_of.iter().map(|l| *l as u32).collect();
        let target = label_of
            .iter()
            .position(|l| *l == 0)
            .expect("assignment is a bijection");
        let excluded = label_of
            .iter()
            .position(|l| *l == dim - 1)
            .expect("assignment is a bijection");
        Ok(MeasurementBasis {
            vectors,
            labels,
            target,
            excluded,
        })
    }
}

/// Rows per packed operator panel. A panel of a 64-dim operator is 16 KiB,
/// small enough to stay cache-resident while every state column streams by.
const PANEL_ROWS: usize = 32;

/// Heap buffer whose payload starts on a cache-line boundary, so the wide
/// vector loads in the integrator kernels never split lines.
struct AlignedBuf {
    raw: Vec<f64>,
    off: usize,
    len: usize,
}

impl AlignedBuf {
    fn zeros(len: usize) -> Self {
        let raw = vec![0.0f64; len + 7];
        let off = raw.as_ptr().align_offset(64).min(7);
        AlignedBuf { raw, off, len }
    }

    fn from_vec(v: Vec<f64>) -> Self {
        let mut buf = Self::zeros(v.len());
        buf.slice_mut().copy_from_slice(&v);
        buf
    }

    fn slice(&self) -> &[f64] {
        &self.raw[self.off..self.off + self.len]
    }

    fn slice_mut(&mut self) -> &mut [f64] {
        &mut self.raw[self.off..self.off + self.len]
    }
}

/// q = h · p for column-major slices with an even number of columns; h is
/// dim x dim, p and q are dim x cols. Used for the occasional square product;
/// the integrator hot path uses the packed-panel variant below.
fn gemm_square(dim: usize, cols: usize, q: &mut [f64], h: &[f64], p: &[f64]) {
    debug_assert_eq!(cols % 2, 0);
    match dim {
        4 => square_kernel::<4>(cols, q, h, p),
        8 => square_kernel::<8>(cols, q, h, p),
        16 => square_kernel::<16>(cols, q, h, p),
        32 => square_kernel::<32>(cols, q, h, p),
        64 => square_kernel::<64>(cols, q, h, p),
        _ => unreachable!("register dimension {dim} is not a supported power of two"),
    }
}

/// Column-pair kernel: two state columns share each streamed h column so one
/// load stream feeds both multiply ports.
fn square_kernel<const D: usize>(cols: usize, q: &mut [f64], h: &[f64], p: &[f64]) {
    debug_assert_eq!(h.len(), D * D);
    debug_assert_eq!(p.len(), D * cols);
    debug_assert_eq!(q.len(), D * cols);
    for c in 0..cols / 2 {
        let p0 = &p[2 * c * D..(2 * c + 1) * D];
        let p1 = &p[(2 * c + 1) * D..(2 * c + 2) * D];
        let mut acc0 = [0.0f64; D];
        let mut acc1 = [0.0f64; D];
        for (k, hk) in h.chunks_exact(D).enumerate() {
            let b0 = p0[k];
            let b1 = p1[k];
            for r in 0..D {
                acc0[r] = b0.mul_add(hk[r], acc0[r]);
                acc1[r] = b1.mul_add(hk[r], acc1[r]);
            }
        }
        q[2 * c * D..(2 * c + 1) * D].copy_from_slice(&acc0);
        q[(2 * c + 1) * D..(2 * c + 2) * D].copy_from_slice(&acc1);
    }
}

/// Repack a column-major dim x dim operator into row panels: panel f stores
/// rows [f·32, f·32 + 32) contiguously per column. For dim <= 32 the packed
/// layout equals the plain one.
fn pack_panels(dim: usize, h: &[f64]) -> Vec<f64> {
    debug_assert_eq!(h.len(), dim * dim);
    if dim <= PANEL_ROWS {
        return h.to_vec();
    }
    let mut out = Vec::with_capacity(dim * dim);
    for f in 0..dim / PANEL_ROWS {
        for k in 0..dim {
            let start = k * dim + f * PANEL_ROWS;
            out.extend_from_slice(&h[start..start + PANEL_ROWS]);
        }
    }
    out
}

/// Position of matrix entry (row, col) inside the packed-panel layout.
fn packed_index(dim: usize, row: usize, col: usize) -> usize {
    if dim <= PANEL_ROWS {
        return col * dim + row;
    }
    let f = row / PANEL_ROWS;
    f * dim * PANEL_ROWS + col * PANEL_ROWS + row % PANEL_ROWS
}

/// q = h · p with h in packed-panel layout and `cols` divisible by four.
/// Each panel pass keeps its 16 KiB of h hot in cache while the state
/// columns stream.
fn gemm_panels(dim: usize, cols: usize, q: &mut [f64], hpack: &[f64], p: &[f64]) {
    debug_assert_eq!(cols % 4, 0);
    match dim {
        4 => panel_kernel_quad::<4>(4, cols, q, hpack, p, 0),
        8 => panel_kernel_quad::<8>(8, cols, q, hpack, p, 0),
        16 => panel_kernel_quad::<16>(16, cols, q, hpack, p, 0),
        32 => panel_kernel_quad::<32>(32, cols, q, hpack, p, 0),
        64 => {
            let panel = 64 * PANEL_ROWS;
            panel_kernel_quad::<PANEL_ROWS>(64, cols, q, &hpack[..panel], p, 0);
            panel_kernel_quad::<PANEL_ROWS>(64, cols, q, &hpack[panel..], p, PANEL_ROWS);
        }
        _ => unreachable!("register dimension {dim} is not a supported power of two"),
    }
}

/// One row-panel of the product, four columns at a time so each streamed h
/// column feeds four fused-multiply accumulator sets:
/// q[qoff..qoff + R, :] = panel · p.
fn panel_kernel_quad<const R: usize>(
    dim: usize,
    cols: usize,
    q: &mut [f64],
    hpanel: &[f64],
    p: &[f64],
    qoff: usize,
) {
    debug_assert_eq!(hpanel.len(), dim * R);
    debug_assert_eq!(cols % 4, 0);
    for c in 0..cols / 4 {
        let p0 = &p[4 * c * dim..(4 * c + 1) * dim];
        let p1 = &p[(4 * c + 1) * dim..(4 * c + 2) * dim];
        let p2 = &p[(4 * c + 2) * dim..(4 * c + 3) * dim];
        let p3 = &p[(4 * c + 3) * dim..(4 * c + 4) * dim];
        let mut acc0 = [0.0f64; R];
        let mut acc1 = [0.0f64; R];
        let mut acc2 = [0.0f64; R];
        let mut acc3 = [0.0f64; R];
        for (k, hk) in hpanel.chunks_exact(R).enumerate() {
            let b0 = p0[k];
            let b1 = p1[k];
            let b2 = p2[k];
            let b3 = p3[k];
            for r in 0..R {
                acc0[r] = b0.mul_add(hk[r], acc0[r]);
                acc1[r] = b1.mul_add(hk[r], acc1[r]);
                acc2[r] = b2.mul_add(hk[r], acc2[r]);
                acc3[r] = b3.mul_add(hk[r], acc3[r]);
            }
        }
        q[4 * c * dim + qoff..4 * c * dim + qoff + R].copy_from_slice(&acc0);
        q[(4 * c + 1) * dim + qoff..(4 * c + 1) * dim + qoff + R].copy_from_slice(&acc1);
        q[(4 * c + 2) * dim + qoff..(4 * c + 2) * dim + qoff + R].copy_from_slice(&acc2);
        q[(4 * c + 3) * dim + qoff..(4 * c + 3) * dim + qoff + R].copy_from_slice(&acc3);
    }
}

/// oa[j, i] += sa[i, j] and ob[j, i] += sb[i, j]: the transposed halves of
/// the commutator assembly, tiled so the strided reads stay within a few
/// cache lines per tile. Both parts share one walk.
fn transpose_add(oa: &mut [f64], ob: &mut [f64], sa: &[f64], sb: &[f64], dim: usize) {
    let tile = dim.min(8);
    let mut jb = 0;
    while jb < dim {
        let mut ib = 0;
        while ib < dim {
            for j in jb..jb + tile {
                for i in ib..ib + tile {
                    let ji = j * dim + i;
                    let ij = i * dim + j;
                    oa[ji] += sa[ij];
                    ob[ji] += sb[ij];
                }
            }
            ib += tile;
        }
        jb += tile;
    }
}

/// tmp = p + ch · k, the trial state for one integrator stage.
fn stage_state(tmp: &mut [f64], p: &[f64], k: &[f64], ch: f64) {
    for ((t, s), v) in tmp.iter_mut().zip(p).zip(k) {
        *t = ch.mul_add(*v, *s);
    }
}

/// p += w · (k1 + 2k2 + 2k3 + k4), the classic fourth-order update.
fn rk4_combine(p: &mut [f64], k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64], w: f64) {
    for ((((s, a), b), c), d) in p.iter_mut().zip(k1).zip(k2).zip(k3).zip(k4) {
        *s = w.mul_add(a + 2.0 * (b + c) + d, *s);
    }
}

/// Orthogonal change of basis between the computational frame and the
/// product X frame: the n-fold Kronecker power of the single-spin Hadamard.
/// Its own inverse; index bit set means that site is |-⟩ on the X side.
fn hadamard_frame(dim: usize) -> DMatrix<f64> {
    let norm = 1.0 / (dim as f64).sqrt();
    DMatrix::from_fn(dim, dim, |i, j| {
        if (i & j).count_ones() % 2 == 0 {
            norm
        } else {
            -norm
        }
    })
}

/// X-frame index of the product state with the given minus-spin bitmask.
/// Label bit s is spin s; frame index bit n-1-s is spin s.
fn x_index_of_label(label: usize, n: usize) -> usize {
    let mut x = 0usize;
    for s in 0..n {
        if (label >> s) & 1 == 1 {
            x |= 1 << (n - 1 - s);
        }
    }
    x
}

/// Elementwise X-frame action of everything in the dissipator except the
/// decay jump. With w(x) counting minus sites in an index,
///
/// ```text
/// dephasing:  -γ · hamming(x, y)
/// decay:      -γ/2 · (2n - w(x) - w(y))
/// ```
///
/// per matrix element (x, y), both diagonal in this frame.
fn dissipator_mask(dim: usize, n: usize, gamma: f64, decay: bool, dephasing: bool) -> Vec<f64> {
    let mut w = vec![0.0f64; dim * dim];
    for y in 0..dim {
        for x in 0..dim {
            let mut v = 0.0;
            if dephasing {
                v -= gamma * (x ^ y).count_ones() as f64;
            }
            if decay {
                v -= 0.5
                    * gamma
                    * (2 * n - x.count_ones() as usize - y.count_ones() as usize) as f64;
            }
            w[y * dim + x] = v;
        }
    }
    w
}

/// One column of the site-decay jump for bit run length L: within every
/// chunk of 2L rows, the bit-set half accumulates the bit-clear half of the
/// source column. Monomorphized so the interleave vectorizes even at L = 1.
fn jump_column<const L: usize>(da: &mut [f64], db: &mut [f64], sa: &[f64], sb: &[f64], g: f64) {
    let cols = da
        .chunks_exact_mut(2 * L)
        .zip(db.chunks_exact_mut(2 * L))
        .zip(sa.chunks_exact(2 * L).zip(sb.chunks_exact(2 * L)));
    for ((ca, cb), (va, vb)) in cols {
        for t in 0..L {
            ca[L + t] = g.mul_add(va[t], ca[L + t]);
            cb[L + t] = g.mul_add(vb[t], cb[L + t]);
        }
    }
}

/// out += gamma · Σ_sites (jump of the site decay channel), which in the X
/// frame copies the bit-clear quadrant into the bit-set one per site bit b:
/// out[x, y] += gamma · p[x ^ b, y ^ b] wherever both indices have the bit.
/// Both matrix parts ride in one traversal; all sites of one destination
/// column are accumulated while it is hot.
fn decay_jumps_add(
    oa: &mut [f64],
    ob: &mut [f64],
    pa: &[f64],
    pb: &[f64],
    dim: usize,
    n: usize,
    gamma: f64,
) {
    for yc in 1..dim {
        let da = &mut oa[yc * dim..(yc + 1) * dim];
        let db = &mut ob[yc * dim..(yc + 1) * dim];
        for pos in 0..n {
            let l = 1usize << pos;
            if yc & l == 0 {
                continue;
            }
            let sa = &pa[(yc - l) * dim..(yc - l + 1) * dim];
            let sb = &pb[(yc - l) * dim..(yc - l + 1) * dim];
            match l {
                1 => jump_column::<1>(da, db, sa, sb, gamma),
                2 => jump_column::<2>(da, db, sa, sb, gamma),
                4 => jump_column::<4>(da, db, sa, sb, gamma),
                8 => jump_column::<8>(da, db, sa, sb, gamma),
                16 => jump_column::<16>(da, db, sa, sb, gamma),
                _ => jump_column::<32>(da, db, sa, sb, gamma),
            }
        }
    }
}

/// Oscillating operator of the drive, reduced to its cheapest X-frame form.
#[derive(Clone, Copy)]
enum DriveKernel<'a> {
    /// Nothing oscillates.
    Off,
    /// Pure n-local Z drive: the index-complement permutation, times m.
    CouplerOnly { m: f64 },
    /// General dense X-frame drive matrix.
    Dense(&'a [f64]),
}

/// Right-hand side of the Lindblad equation on the packed X-frame state
/// [A | B].
struct Generator<'a> {
    dim: usize,
    n: usize,
    /// Static Hamiltonian in the X frame, packed-panel layout.
    h0: &'a [f64],
    drive: DriveKernel<'a>,
    omega: f64,
    /// Elementwise dissipator mask, or None for closed evolution.
    mask: Option<&'a [f64]>,
    /// Decay jump rate; zero when the decay channel is off.
    jump: f64,
}

impl Generator<'_> {
    /// out = RHS(t, p); `q` is scratch of size 2·dim². `ht` is a dim²
    /// Hamiltonian buffer owned by the caller across the whole run; the
    /// coupler-only path pre-seeds it with h0 and touches just the
    /// anti-diagonal (the X-frame footprint of the n-local Z string) here.
    fn eval(&self, t: f64, p: &[f64], out: &mut [f64], ht: &mut [f64], q: &mut [f64]) {
        let dim = self.dim;
        let dd = dim * dim;
        match self.drive {
            DriveKernel::Dense(d) => {
                let c = (self.omega * t).cos();
                for i in 0..dd {
                    ht[i] = self.h0[i] + c * d[i];
                }
                gemm_panels(dim, 2 * dim, q, ht, p);
            }
            DriveKernel::CouplerOnly { m } => {
                let cm = m * (self.omega * t).cos();
                for x in 0..dim {
                    let idx = packed_index(dim, dim - 1 - x, x);
                    ht[idx] = self.h0[idx] + cm;
                }
                gemm_panels(dim, 2 * dim, q, ht, p);
            }
            DriveKernel::Off => gemm_panels(dim, 2 * dim, q, self.h0, p),
        }

        // dA = HB + (HB)ᵀ, dB = (HA)ᵀ - HA, assembled in mirror pairs so the
        // state stays symmetric/antisymmetric to the last bit. The stride-one
        // terms go in one vectorizable sweep (the elementwise dissipator
        // rides along); the transposed terms get their own minimal pass so
        // the strided reads do not force the whole assembly scalar.
        let (qa, qb) = q.split_at(dd);
        let (oa, ob) = out.split_at_mut(dd);
        match self.mask {
            Some(w) => {
                let (pa, pb) = p.split_at(dd);
                for (((o, &wv), &pv), &qv) in oa.iter_mut().zip(w).zip(pa).zip(qb) {
                    *o = wv.mul_add(pv, qv);
                }
                for (((o, &wv), &pv), &qv) in ob.iter_mut().zip(w).zip(pb).zip(qa) {
                    *o = wv.mul_add(pv, -qv);
                }
            }
            None => {
                oa.copy_from_slice(qb);
                for (o, &qv) in ob.iter_mut().zip(qa) {
                    *o = -qv;
                }
            }
        }
        transpose_add(oa, ob, qb, qa, dim);
        if self.jump > 0.0 {
            let (pa, pb) = p.split_at(dd);
            decay_jumps_add(oa, ob, pa, pb, dim, self.n, self.jump);
        }
    }
}

/// Integrate the Lindblad equation from `initial` over `[0, t_end]` and
/// report populations and contrast in the labeled measurement basis.
///
/// `spec` provides the static Hamiltonian as given (for the standard protocol
/// pass it coupler-off with ε = 0; the oscillating coupler lives entirely in
/// `drive`). The measurement basis always uses the coupler-off Hamiltonian.
/// `t_end` rounds to the nearest positive multiple of the sample interval.
pub fn evolve_lindblad(
    spec: &SpinSystemSpec,
    drive: &DriveSpec,
    lindblad: &LindbladSpec,
    t_end: f64,
    initial: InitialState,
    integrator: &IntegratorConfig,
) -> Result<ContrastReport> {
    spec.validate()?;
    drive.validate(spec.n)?;
    if lindblad.t2.is_nan() || lindblad.t2 <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "coherence time must be positive, got {}",
            lindblad.t2
        )));
    }
    integrator.validate()?;
    if !t_end.is_finite() || t_end <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "evolution window must be finite and positive, got {t_end} ns"
        )));
    }

    let n = spec.n;
    let dim = 1usize << n;
    let dd = dim * dim;
    let frame = hadamard_frame(dim);
    let h0 = &frame * realize_static(spec)? * &frame;
    let h0_pack = AlignedBuf::from_vec(pack_panels(dim, h0.as_slice()));
    let dense_drive = if drive.driven_terms.iter().any(|(_, a)| *a != 0.0) {
        let d = &frame * drive.realize(n) * &frame;
        Some(AlignedBuf::from_vec(pack_panels(dim, d.as_slice())))
    } else {
        None
    };
    let kernel = match &dense_drive {
        Some(d) => DriveKernel::Dense(d.slice()),
        None if drive.m != 0.0 => DriveKernel::CouplerOnly { m: drive.m },
        None => DriveKernel::Off,
    };
    let basis = MeasurementBasis::build(spec, &frame)?;
    let (a0, b0) = initial.into_x_parts(n, &frame)?;

    let gamma = lindblad.gamma();
    let mask = if gamma > 0.0 {
        Some(AlignedBuf::from_vec(dissipator_mask(
            dim,
            n,
            gamma,
            lindblad.include_decay,
            lindblad.include_dephasing,
        )))
    } else {
        None
    };
    let interval = integrator.sample_interval;
    let samples = ((t_end / interval).round() as usize).max(1);
    let mut bound = 2.0 * std::f64::consts::PI / drive.omega;
    bound = bound.min(lindblad.t2);
    let amp = drive.total_amplitude();
    if amp > 0.0 {
        bound = bound.min(1.0 / amp);
    }
    let h_max = bound / integrator.step_divisor as f64;
    let steps_per_sample = (interval / h_max).ceil() as usize;
    let h = interval / steps_per_sample as f64;

    // Packed state [A | B] and RK4 buffers, all column-major slices.
    let mut p = AlignedBuf::zeros(2 * dd);
    p.slice_mut()[..dd].copy_from_slice(a0.as_slice());
    p.slice_mut()[dd..].copy_from_slice(b0.as_slice());
    let mut k1 = AlignedBuf::zeros(2 * dd);
    let mut k2 = AlignedBuf::zeros(2 * dd);
    let mut k3 = AlignedBuf::zeros(2 * dd);
    let mut k4 = AlignedBuf::zeros(2 * dd);
    let mut tmp = AlignedBuf::zeros(2 * dd);
    let mut ht = AlignedBuf::zeros(dd);
    if matches!(kernel, DriveKernel::CouplerOnly { .. }) {
        ht.slice_mut().copy_from_slice(h0_pack.slice());
    }
    let mut q = AlignedBuf::zeros(2 * dd);
    let mut g = vec![0.0f64; dd];

    let generator = Generator {
        dim,
        n,
        h0: h0_pack.slice(),
        drive: kernel,
        omega: drive.omega,
        mask: mask.as_ref().map(|m| m.slice()),
        jump: if lindblad.include_decay { gamma } else { 0.0 },
    };

    let mut time_grid = Vec::with_capacity(samples + 1);
    let mut populations = Vec::with_capacity(samples + 1);
    let mut trace_error = 0.0f64;
    let mut positive = true;

    let vecs = basis.vectors.as_slice();
    let mut record = |p: &[f64], g: &mut [f64], t: f64, trace_error: &mut f64, positive: &mut bool| -> Result<()> {
        let a = &p[..dd];
        let mut trace = 0.0;
        for i in 0..dim {
            trace += a[i * dim + i];
        }
        let drift = (trace - 1.0).abs();
        *trace_error = trace_error.max(drift);
        if drift > TRACE_TOLERANCE {
            return Err(Error::IntegratorAccuracy(format!(
                "trace drifted by {drift:.3e} at t = {t} ns"
            )));
        }
        gemm_square(dim, dim, g, a, vecs);
        let mut pops = Vec::with_capacity(dim);
        for m in 0..dim {
            let vm = &vecs[m * dim..(m + 1) * dim];
            let gm = &g[m * dim..(m + 1) * dim];
            let pop: f64 = vm.iter().zip(gm).map(|(v, w)| v * w).sum();
            pops.push(pop);
        }
        if pops.iter().any(|p| *p < -POSITIVITY_TOLERANCE) {
            *positive = false;
        }
        let purity: f64 = p.iter().map(|v| v * v).sum();
        if purity > 1.0 + POSITIVITY_TOLERANCE {
            *positive = false;
        }
        time_grid.push(t);
        populations.push(pops);
        Ok(())
    };

    record(p.slice(), &mut g, 0.0, &mut trace_error, &mut positive)?;
    for sample in 0..samples {
        let t0 = sample as f64 * interval;
        for step in 0..steps_per_sample {
            let t = t0 + step as f64 * h;
            generator.eval(t, p.slice(), k1.slice_mut(), ht.slice_mut(), q.slice_mut());
            stage_state(tmp.slice_mut(), p.slice(), k1.slice(), 0.5 * h);
            generator.eval(
                t + 0.5 * h,
                tmp.slice(),
                k2.slice_mut(),
                ht.slice_mut(),
                q.slice_mut(),
            );
            stage_state(tmp.slice_mut(), p.slice(), k2.slice(), 0.5 * h);
            generator.eval(
                t + 0.5 * h,
                tmp.slice(),
                k3.slice_mut(),
                ht.slice_mut(),
                q.slice_mut(),
            );
            stage_state(tmp.slice_mut(), p.slice(), k3.slice(), h);
            generator.eval(
                t + h,
                tmp.slice(),
                k4.slice_mut(),
                ht.slice_mut(),
                q.slice_mut(),
            );
            rk4_combine(
                p.slice_mut(),
                k1.slice(),
                k2.slice(),
                k3.slice(),
                k4.slice(),
                h / 6.0,
            );
        }
        record(
            p.slice(),
            &mut g,
            (sample + 1) as f64 * interval,
            &mut trace_error,
            &mut positive,
        )?;
    }

    let mut max_target = f64::NEG_INFINITY;
    let mut max_other = f64::NEG_INFINITY;
    for row in &populations {
        max_target = max_target.max(row[basis.target]);
        for (m, pop) in row.iter().enumerate() {
            if m != basis.target && m != basis.excluded {
                max_other = max_other.max(*pop);
            }
        }
    }

    Ok(ContrastReport {
        time_grid,
        populations,
        labels: basis.labels,
        contrast: max_target - max_other,
        target_index: basis.target,
        excluded_index: basis.excluded,
        trace_error,
        hermiticity_error: 0.0,
        positive,
        step: h,
    })
}

/// First-order transition amplitude for a `cos(ωt)` drive with unit matrix
/// element between states separated by `omega_ab`:
///
/// ```text
/// c(t) = -i (m/2) ∫₀ᵗ ( e^{i(ω_ab+ω)s} + e^{i(ω_ab-ω)s} ) ds.
/// ```
///
/// At exact resonance the second integral is secular with magnitude `m·t/2`
/// and the first stays bounded by `m/ω`. |c|² is the predicted transition
/// probability while it remains small.
pub fn first_order_amplitude(m: f64, omega: f64, omega_ab: f64, t: f64) -> Complex<f64> {
    fn sinc(x: f64) -> f64 {
        if x.abs() < 1e-8 {
            1.0 - x * x / 6.0
        } else {
            x.sin() / x
        }
    }
    // ∫₀ᵗ e^{iνs} ds = t e^{iνt/2} sinc(νt/2), exact and stable near ν = 0.
    fn phase_integral(nu: f64, t: f64) -> Complex<f64> {
        let half = 0.5 * nu * t;
        Complex::from_polar(t * sinc(half), half)
    }
    let sum = phase_integral(omega_ab + omega, t) + phase_integral(omega_ab - omega, t);
    Complex::new(0.0, -0.5 * m) * sum
}

/// Magnitude of the second-order transition amplitude caused by oscillating
/// terms, with every intermediate gap collapsed to the single-spin scale δ
/// and the drive resonant at ω = 2nδ:
///
/// ```text
/// |Σ_m J̃_im J̃_fm| / (δ ω),   J̃ built from the selection rules
/// ```
///
/// where, over product X states m, `J̃_im` picks up the X amplitudes on the
/// diagonal (m = i) plus the Z string on the plus-spin set of m, and `J̃_fm`
/// the X amplitudes at m = f plus the Z string on the minus-spin set. With
/// every Z subset driven at equal strength δJ (the full register at m = δJ)
/// this reduces to 2ⁿ δJ² / (2n δ²).
///
/// The Z-pair part needs two driven subsets of locality k and n-k; with no
/// such pair the spurious contribution is exactly zero.
pub fn second_order_spurious_estimate(
    driven_terms: &[(PauliString, f64)],
    delta: &[f64],
    n: usize,
) -> Result<f64> {
    if !(2..=MAX_SPINS).contains(&n) {
        return Err(Error::InvalidParameter(format!(
            "spin count {n} outside 2..={MAX_SPINS}"
        )));
    }
    if delta.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} transverse fields for {n} spins",
            delta.len()
        )));
    }
    let d0 = delta[0];
    if !d0.is_finite() || d0 <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "transverse field must be positive, got {d0}"
        )));
    }
    if delta.iter().any(|d| (d - d0).abs() > 1e-12 * d0.abs()) {
        return Err(Error::UnsupportedRegime(
            "the second-order estimate needs equal transverse fields on every spin".into(),
        ));
    }

    let full = (1u32 << n) - 1;
    let mut z_amp = std::collections::BTreeMap::<u32, f64>::new();
    let mut x_sum = 0.0f64;
    for (string, amp) in driven_terms {
        if string.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "driven term {string} is sized for {} spins, expected {n}",
                string.n()
            )));
        }
        if !amp.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "non-finite amplitude on driven term {string}"
            )));
        }
        match string.axis() {
            Axis::X => {
                if string.weight() == n {
                    return Err(Error::InvalidSubset(
                        "an X string on the full register is outside the model family".into(),
                    ));
                }
                x_sum += amp;
            }
            Axis::Z => {
                *z_amp.entry(string.subset().bitmask()).or_insert(0.0) += amp;
            }
        }
    }
    let z = |bits: u32| -> f64 {
        if bits == 0 {
            0.0
        } else {
            z_amp.get(&bits).copied().unwrap_or(0.0)
        }
    };

    let mut total = 0.0f64;
    for m in 0..=full {
        // m enumerates product X states by their plus-spin bitmask;
        // i = all minus (m = 0), f = all plus (m = full).
        let j_im = if m == 0 { x_sum } else { 0.0 } + z(m);
        let j_fm = if m == full { x_sum } else { 0.0 } + z(full & !m);
        total += j_im * j_fm;
    }
    let omega = 2.0 * n as f64 * d0;
    Ok(total.abs() / (d0 * omega))
}

/// Whether the first-order n-local amplitude dominates the second-order
/// spurious one: `m > 2^{n-1} δJ² / (n δ)`. Returns the pass flag and the
/// margin `m·n·δ / (2^{n-1} δJ²)`; a zero δJ gives an infinite margin.
pub fn detectability_criterion(m: f64, delta_j: f64, delta: f64, n: usize) -> (bool, f64) {
    if delta_j == 0.0 {
        return (true, f64::INFINITY);
    }
    let margin = m * n as f64 * delta / ((1u64 << (n - 1)) as f64 * delta_j * delta_j);
    (margin > 1.0, margin)
}

/// Shortest wait before a transition probability `m²t²` clears the
/// measurement precision `xi`: t₀ = √xi / m.
pub fn wait_time_estimate(m: f64, xi: f64) -> f64 {
    xi.sqrt() / m
}

/// One cell of the coherence-time study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastGridRow {
    pub n: usize,
    pub t2_ns: f64,
    pub contrast: f64,
    /// Largest |trace(ρ) - 1| seen during the cell's evolution.
    pub trace_error: f64,
}

/// Contrast of the standard protocol over a (register size, T₂) grid.
///
/// Each cell builds the seeded reference system for its n (couplings on,
/// coupler off, ε = 0), drives the n-local term alone at the resonant
/// frequency with both decoherence channels open, and starts from |-⟩^⊗n.
/// Cells are independent and run in parallel.
pub fn run_contrast_grid(
    n_list: &[usize],
    t2_grid_ns: &[f64],
    spec_seed: u64,
    window_ns: f64,
    integrator: &IntegratorConfig,
) -> Result<Vec<ContrastGridRow>> {
    let mut cells = Vec::new();
    for n in n_list {
        for t2 in t2_grid_ns {
            cells.push((*n, *t2));
        }
    }
    cells
        .par_iter()
        .map(|(n, t2)| {
            let spec = default_spec(*n, seed::derive(spec_seed, &[*n as u64]))?;
            let drive = DriveSpec::coupler_only(spec.m, resonant_frequency(&spec)?);
            let lindblad = LindbladSpec::both(*t2)?;
            let initial = ProductXState::uniform(XSign::Minus, *n)?;
            let report = evolve_lindblad(
                &spec,
                &drive,
                &lindblad,
                window_ns,
                initial.into(),
                integrator,
            )?;
            Ok(ContrastGridRow {
                n: *n,
                t2_ns: *t2,
                contrast: report.contrast,
                trace_error: report.trace_error,
            })
        })
        .collect()
}

/// Grid rows as `n,T2_ns,contrast` CSV.
pub fn write_contrast_grid_csv<W: std::io::Write>(
    rows: &[ContrastGridRow],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "n,T2_ns,contrast")?;
    for row in rows {
        writeln!(w, "{},{:.16e},{:.16e}", row.n, row.t2_ns, row.contrast)?;
    }
    Ok(())
}

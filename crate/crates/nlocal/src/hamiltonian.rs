//! The n-spin Hamiltonian family under test.
//!
//! H = Σ_s (δ_s X_s + ε_s Z_s)
//!   + Σ_{1<|Q|<n} (J_Z^(Q) Z-string + J_X^(Q) X-string)
//!   + M Z^⊗n                       (only when the coupler is on)
//!
//! The n-local X term is identically zero in this family. When the coupler
//! is on, every non-n-local parameter may additionally pick up a spurious
//! shift; those shifts model parasitic effects of activating the coupler and
//! are the thing a locality fit has to disentangle from a genuine M.
//! All strengths are angular frequencies in rad/ns (see [`crate::units`]).

use std::collections::BTreeMap;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::{enumerate_subsets, Axis, Subset, MAX_SPINS};
use crate::seed;
use crate::units::TAU;

/// Default transverse field δ_s = 2π × 2 GHz.
pub const DEFAULT_DELTA: f64 = TAU * 2.0;
/// Default longitudinal field ceiling ε_max = 2π × 10 GHz.
pub const DEFAULT_EPSILON_MAX: f64 = TAU * 10.0;
/// Lower-locality couplings are drawn uniformly from [0, 2π × 0.3 GHz).
pub const DEFAULT_COUPLING_CEILING: f64 = TAU * 0.3;
/// Default n-local coupling M = 2π × 50 MHz.
pub const DEFAULT_M: f64 = TAU * 0.05;
/// Default spurious-shift scale factor η = 1/2 (shifts of size ηM).
pub const DEFAULT_ETA: f64 = 0.5;

/// Identifies one coupling J_axis^(Q); the key orders by subset (size, then
/// lexicographic) and then by axis, which fixes the canonical parameter
/// order used for seeded draws and serialized output.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CouplingKey {
    pub subset: Subset,
    pub axis: Axis,
}

impl std::fmt::Display for CouplingKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let letter = match self.axis {
            Axis::X => "X",
            Axis::Z => "Z",
        };
        let parts: Vec<String> = self.subset.indices().iter().map(|i| i.to_string()).collect();
        write!(f, "J{letter}[{}]", parts.join(","))
    }
}

/// Identifies one shiftable Hamiltonian parameter. The n-local strength M is
/// deliberately not representable here: spurious shifts never touch it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    /// Transverse field δ_s on one spin.
    DeltaX(usize),
    /// Longitudinal field offset on one spin (adds to whatever ε_s is applied).
    EpsilonZ(usize),
    /// A lower-locality coupling strength.
    Coupling(CouplingKey),
}

impl ParamId {
    /// Number of spins the parameter's operator acts on.
    pub fn locality(&self) -> usize {
        match self {
            ParamId::DeltaX(_) | ParamId::EpsilonZ(_) => 1,
            ParamId::Coupling(key) => key.subset.len(),
        }
    }
}

impl std::fmt::Display for ParamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamId::DeltaX(s) => write!(f, "delta[{s}]"),
            ParamId::EpsilonZ(s) => write!(f, "epsilon[{s}]"),
            ParamId::Coupling(key) => write!(f, "{key}"),
        }
    }
}

fn parse_index_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidParameter(format!("bad spin index {p:?}")))
        })
        .collect()
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = || Error::InvalidParameter(format!("unrecognized parameter identifier {s:?}"));
        let (head, rest) = s.split_once('[').ok_or_else(err)?;
        let body = rest.strip_suffix(']').ok_or_else(err)?;
        match head {
            "delta" => Ok(ParamId::DeltaX(body.parse().map_err(|_| err())?)),
            "epsilon" => Ok(ParamId::EpsilonZ(body.parse().map_err(|_| err())?)),
            "JX" | "JZ" => {
                let axis = if head == "JX" { Axis::X } else { Axis::Z };
                let subset = Subset::new(parse_index_list(body)?)?;
                Ok(ParamId::Coupling(CouplingKey { subset, axis }))
            }
            _ => Err(err()),
        }
    }
}

impl Serialize for ParamId {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ParamId {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(de)?;
        ParamId::from_str(&text).map_err(serde::de::Error::custom)
    }
}

/// Distribution for spurious shifts δJ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpuriousDistribution {
    /// Uniform on (-ηM, ηM); the default.
    SymmetricUniform,
    /// Uniform on [0, ηM); used by the coupling-robustness study.
    PositiveUniform,
}

/// Which parameters receive spurious shifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSet {
    /// Every δ_s, every ε_s offset, and every lower-locality coupling;
    /// 2n + 2(2^n - n - 2) parameters in total.
    AllNonNlocal,
    /// Only the lower-locality couplings; 2(2^n - n - 2) parameters.
    CouplingsOnly,
}

/// How to sample spurious shifts for a spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpuriousModel {
    pub eta: f64,
    pub distribution: SpuriousDistribution,
    pub target_set: TargetSet,
    pub seed: u64,
}

impl SpuriousModel {
    pub fn symmetric(eta: f64, seed: u64) -> Self {
        SpuriousModel {
            eta,
            distribution: SpuriousDistribution::SymmetricUniform,
            target_set: TargetSet::AllNonNlocal,
            seed,
        }
    }
}

/// The parameters eligible for a spurious shift, in canonical order.
pub fn targeted_params(n: usize, target_set: TargetSet) -> Vec<ParamId> {
    let mut out = Vec::new();
    if matches!(target_set, TargetSet::AllNonNlocal) {
        out.extend((0..n).map(ParamId::DeltaX));
        out.extend((0..n).map(ParamId::EpsilonZ));
    }
    for subset in enumerate_subsets(n, 2) {
        if subset.len() == n {
            continue;
        }
        for axis in [Axis::X, Axis::Z] {
            out.push(ParamId::Coupling(CouplingKey {
                subset: subset.clone(),
                axis,
            }));
        }
    }
    out
}

mod coupling_map_serde {
    use super::*;
    use serde::ser::SerializeSeq;

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Entry {
        axis: Axis,
        subset: Subset,
        value: f64,
    }

    pub fn serialize<S: serde::Serializer>(
        map: &BTreeMap<CouplingKey, f64>,
        ser: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = ser.serialize_seq(Some(map.len()))?;
        for (key, value) in map {
            seq.serialize_element(&Entry {
                axis: key.axis,
                subset: key.subset.clone(),
                value: *value,
            })?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(
        de: D,
    ) -> std::result::Result<BTreeMap<CouplingKey, f64>, D::Error> {
        let entries = Vec::<Entry>::deserialize(de)?;
        let mut map = BTreeMap::new();
        for e in entries {
            let key = CouplingKey {
                subset: e.subset,
                axis: e.axis,
            };
            if map.insert(key.clone(), e.value).is_some() {
                return Err(serde::de::Error::custom(format!("duplicate coupling {key}")));
            }
        }
        Ok(map)
    }
}

/// One field configuration of the spectroscopy protocol: the spins that get
/// the swept ε; all others are pinned at ε = 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfiguration {
    pub active: Subset,
}

impl FieldConfiguration {
    pub fn new(active: Subset) -> Self {
        FieldConfiguration { active }
    }

    /// All 2^n - 1 configurations in canonical subset order.
    pub fn all(n: usize) -> Vec<FieldConfiguration> {
        enumerate_subsets(n, 1)
            .into_iter()
            .map(FieldConfiguration::new)
            .collect()
    }

    /// Bitmask with bit i set when spin i is active.
    pub fn bitmask(&self) -> u32 {
        self.active.bitmask()
    }
}

/// Complete description of one n-spin system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinSystemSpec {
    pub n: usize,
    /// Per-spin transverse fields δ_s.
    pub delta: Vec<f64>,
    /// Per-spin longitudinal fields ε_s as currently set on the device
    /// (spectroscopy overrides these per configuration; dynamics runs use
    /// them as-is, normally all zero).
    pub epsilon: Vec<f64>,
    pub epsilon_max: f64,
    /// Lower-locality couplings J_axis^(Q), 1 < |Q| < n.
    #[serde(with = "coupling_map_serde")]
    pub couplings: BTreeMap<CouplingKey, f64>,
    /// The n-local coupling strength M (takes effect only with `coupler_on`).
    pub m: f64,
    pub coupler_on: bool,
    /// Spurious shifts applied to non-n-local parameters when the coupler is
    /// on, keyed by parameter identifier.
    pub spurious: BTreeMap<ParamId, f64>,
}

impl SpinSystemSpec {
    /// Check the structural invariants; every realization path calls this.
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n > MAX_SPINS {
            return Err(Error::InvalidParameter(format!(
                "spin count {} outside 2..={MAX_SPINS}",
                self.n
            )));
        }
        if self.delta.len() != self.n || self.epsilon.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "delta/epsilon lengths {}/{} do not match n = {}",
                self.delta.len(),
                self.epsilon.len(),
                self.n
            )));
        }
        let all_finite = self
            .delta
            .iter()
            .chain(self.epsilon.iter())
            .chain(self.couplings.values())
            .chain(self.spurious.values())
            .chain([&self.epsilon_max, &self.m])
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidParameter("non-finite strength".into()));
        }
        for e in &self.epsilon {
            if *e < 0.0 || *e > self.epsilon_max {
                return Err(Error::InvalidParameter(format!(
                    "epsilon {e} outside [0, {}]",
                    self.epsilon_max
                )));
            }
        }
        for key in self.couplings.keys() {
            if key.subset.len() < 2 || key.subset.len() >= self.n || key.subset.max_index() >= self.n
            {
                return Err(Error::InvalidSubset(format!(
                    "coupling {key} invalid for n = {}",
                    self.n
                )));
            }
        }
        for id in self.spurious.keys() {
            let ok = match id {
                ParamId::DeltaX(s) | ParamId::EpsilonZ(s) => *s < self.n,
                ParamId::Coupling(key) => {
                    key.subset.len() >= 2
                        && key.subset.len() < self.n
                        && key.subset.max_index() < self.n
                }
            };
            if !ok {
                return Err(Error::InvalidSubset(format!(
                    "spurious shift on {id} invalid for n = {}",
                    self.n
                )));
            }
        }
        Ok(())
    }

    /// Effective shift on a parameter: zero while the coupler is off.
    fn shift(&self, id: &ParamId) -> f64 {
        if self.coupler_on {
            self.spurious.get(id).copied().unwrap_or(0.0)
        } else {
            0.0
        }
    }

    /// Clone with the coupler toggled.
    pub fn with_coupler(&self, on: bool) -> SpinSystemSpec {
        let mut s = self.clone();
        s.coupler_on = on;
        s
    }
}

/// The reference system: δ_s = 2π × 2 GHz on every spin, ε_max = 2π × 10 GHz,
/// lower-locality couplings drawn uniformly from [0, 2π × 0.3 GHz) with the
/// given seed, M = 2π × 50 MHz, coupler off, no spurious shifts.
///
/// Draw order is fixed: subsets in canonical order, Z before X within each
/// subset, so a seed pins every coupling.
pub fn default_spec(n: usize, seed: u64) -> Result<SpinSystemSpec> {
    if !(2..=MAX_SPINS).contains(&n) {
        return Err(Error::InvalidParameter(format!(
            "spin count {n} outside 2..={MAX_SPINS}"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut couplings = BTreeMap::new();
    for subset in enumerate_subsets(n, 2) {
        if subset.len() == n {
            continue;
        }
        let jz = rng.gen_range(0.0..DEFAULT_COUPLING_CEILING);
        let jx = rng.gen_range(0.0..DEFAULT_COUPLING_CEILING);
        couplings.insert(
            CouplingKey {
                subset: subset.clone(),
                axis: Axis::Z,
            },
            jz,
        );
        couplings.insert(
            CouplingKey {
                subset,
                axis: Axis::X,
            },
            jx,
        );
    }
    Ok(SpinSystemSpec {
        n,
        delta: vec![DEFAULT_DELTA; n],
        epsilon: vec![0.0; n],
        epsilon_max: DEFAULT_EPSILON_MAX,
        couplings,
        m: DEFAULT_M,
        coupler_on: false,
        spurious: BTreeMap::new(),
    })
}

/// Draw one spurious shift per targeted parameter and return the spec with
/// its spurious map replaced. The n-local parameters are never shifted. One
/// sequential draw per parameter in canonical order makes the sample a pure
/// function of (spec, model).
pub fn sample_spurious(spec: &SpinSystemSpec, model: &SpuriousModel) -> Result<SpinSystemSpec> {
    spec.validate()?;
    if !model.eta.is_finite() || model.eta < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "eta must be finite and non-negative, got {}",
            model.eta
        )));
    }
    let bound = model.eta * spec.m.abs();
    let mut rng = seed::rng(model.seed);
    let mut spurious = BTreeMap::new();
    for id in targeted_params(spec.n, model.target_set) {
        let shift = if bound == 0.0 {
            0.0
        } else {
            match model.distribution {
                SpuriousDistribution::SymmetricUniform => rng.gen_range(-bound..bound),
                SpuriousDistribution::PositiveUniform => rng.gen_range(0.0..bound),
            }
        };
        spurious.insert(id, shift);
    }
    let mut out = spec.clone();
    out.spurious = spurious;
    Ok(out)
}

/// Drop every coupling and spurious shift acting on more than k spins; when
/// k < n this also forces M = 0 so the result is a strictly k-local model.
pub fn truncate_locality(spec: &SpinSystemSpec, k: usize) -> Result<SpinSystemSpec> {
    if k < 1 || k > spec.n {
        return Err(Error::InvalidParameter(format!(
            "locality {k} outside 1..={}",
            spec.n
        )));
    }
    let mut out = spec.clone();
    out.couplings.retain(|key, _| key.subset.len() <= k);
    out.spurious.retain(|id, _| id.locality() <= k);
    if k < spec.n {
        out.m = 0.0;
    }
    Ok(out)
}

/// Basis-index mask for a subset: spin 0 is the leftmost tensor factor, so
/// it owns the most significant bit of a computational-basis index.
pub(crate) fn spin_mask(subset: &Subset, n: usize) -> usize {
    subset
        .indices()
        .iter()
        .fold(0usize, |m, &s| m | (1 << (n - 1 - s)))
}

/// h += c * (Z-string on `mask`); Z-strings are diagonal with parity signs.
pub(crate) fn add_z_string(h: &mut DMatrix<f64>, mask: usize, c: f64) {
    let dim = h.nrows();
    for d in 0..dim {
        let sign = if (d & mask).count_ones().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        h[(d, d)] += sign * c;
    }
}

/// h += c * (X-string on `mask`); X-strings permute basis states by XOR.
pub(crate) fn add_x_string(h: &mut DMatrix<f64>, mask: usize, c: f64) {
    let dim = h.nrows();
    for d in 0..dim {
        h[(d ^ mask, d)] += c;
    }
}

/// Dense real-symmetric realization with explicit per-spin ε values.
fn realize_with_fields(spec: &SpinSystemSpec, fields: &[f64]) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = spec.n;
    let dim = 1usize << n;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for (s, field) in fields.iter().enumerate() {
        let single = Subset::new([s]).expect("singleton");
        let mask = spin_mask(&single, n);
        let dx = spec.delta[s] + spec.shift(&ParamId::DeltaX(s));
        let ez = field + spec.shift(&ParamId::EpsilonZ(s));
        if dx != 0.0 {
            add_x_string(&mut h, mask, dx);
        }
        if ez != 0.0 {
            add_z_string(&mut h, mask, ez);
        }
    }
    for (key, j) in &spec.couplings {
        let c = j + spec.shift(&ParamId::Coupling(key.clone()));
        if c == 0.0 {
            continue;
        }
        let mask = spin_mask(&key.subset, n);
        match key.axis {
            Axis::X => add_x_string(&mut h, mask, c),
            Axis::Z => add_z_string(&mut h, mask, c),
        }
    }
    // Spurious shifts may revive couplings the base map holds at exactly zero
    // or omits entirely; apply any shift whose coupling was not visited above.
    if spec.coupler_on {
        for (id, shift) in &spec.spurious {
            if let ParamId::Coupling(key) = id {
                if !spec.couplings.contains_key(key) && *shift != 0.0 {
                    let mask = spin_mask(&key.subset, n);
                    match key.axis {
                        Axis::X => add_x_string(&mut h, mask, *shift),
                        Axis::Z => add_z_string(&mut h, mask, *shift),
                    }
                }
            }
        }
        if spec.m != 0.0 {
            add_z_string(&mut h, spin_mask(&Subset::full(n), n), spec.m);
        }
    }
    Ok(h)
}

/// Realize H for one spectroscopy point: spins in `config.active` get the
/// swept field `epsilon`, every other spin is pinned at ε = 0. Spurious
/// shifts and M enter only when the coupler is on.
pub fn realize_hamiltonian(
    spec: &SpinSystemSpec,
    config: &FieldConfiguration,
    epsilon: f64,
) -> Result<DMatrix<f64>> {
    if config.active.max_index() >= spec.n {
        return Err(Error::InvalidSubset(format!(
            "configuration {} does not fit in {} spins",
            config.active, spec.n
        )));
    }
    if !epsilon.is_finite() || epsilon < 0.0 || epsilon > spec.epsilon_max {
        return Err(Error::InvalidParameter(format!(
            "epsilon {epsilon} outside [0, {}]",
            spec.epsilon_max
        )));
    }
    let fields: Vec<f64> = (0..spec.n)
        .map(|s| if config.active.contains(s) { epsilon } else { 0.0 })
        .collect();
    realize_with_fields(spec, &fields)
}

/// Realize H with the spec's stored per-spin fields (the dynamics operating
/// point, normally all zero).
pub fn realize_static(spec: &SpinSystemSpec) -> Result<DMatrix<f64>> {
    let fields = spec.epsilon.clone();
    realize_with_fields(spec, &fields)
}

//! Gap spectroscopy over field configurations.
//!
//! For every configuration Q and swept field ε the observable is the
//! transition-energy variation ΔE^M(Q, ε): the ground-to-first-excited gap
//! with the coupler on minus the same gap with the coupler off, both at
//! identical field settings. Measurement noise is modeled as an additive
//! Gaussian shift of each data point.

use nalgebra::DMatrix;
use rand::distributions::Distribution;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{realize_hamiltonian, FieldConfiguration, SpinSystemSpec};
use crate::seed;
use crate::units::TAU;

/// Gaps below this are treated as exact degeneracy and reported as zero.
pub const DEGENERACY_FLOOR: f64 = 1e-12;

/// E₀₁ of a real-symmetric Hamiltonian: difference of the two lowest
/// eigenvalues. Degenerate ground spaces give zero rather than an error.
pub fn transition_energy(h: &DMatrix<f64>) -> Result<f64> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let scale = h.amax().max(1.0);
    if (h - h.transpose()).amax() > 1e-9 * scale {
        return Err(Error::InvalidParameter("matrix is not symmetric".into()));
    }
    let mut evs: Vec<f64> = h.clone().symmetric_eigenvalues().iter().copied().collect();
    if evs.iter().any(|e| !e.is_finite()) {
        return Err(Error::Eigensolver("non-finite eigenvalue".into()));
    }
    evs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let gap = evs[1] - evs[0];
    Ok(if gap < DEGENERACY_FLOOR { 0.0 } else { gap })
}

/// A complete (optionally noisy) dataset of gap shifts: one value per
/// (configuration, grid point) pair, stored configuration-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectroscopySweep {
    pub n: usize,
    pub configurations: Vec<FieldConfiguration>,
    /// Field values in rad/ns, uniform over [0, ε_max] including endpoints.
    pub epsilon_grid: Vec<f64>,
    /// Measured ΔE^M values (noise included when `noise_sigma > 0`).
    pub values: Vec<f64>,
    /// The same values before the noise shift.
    pub clean_values: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SpectroscopySweep {
    /// Flat index of (configuration, grid point).
    pub fn index(&self, config_idx: usize, grid_idx: usize) -> usize {
        config_idx * self.epsilon_grid.len() + grid_idx
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV with full-precision numeric fields; bit i of config_bitmask is
    /// set when spin i receives the swept field.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "config_bitmask,epsilon_GHz,delta_E_MHz")?;
        for (c, config) in self.configurations.iter().enumerate() {
            for (g, eps) in self.epsilon_grid.iter().enumerate() {
                writeln!(
                    w,
                    "{},{:.16e},{:.16e}",
                    config.bitmask(),
                    eps / TAU,
                    self.values[self.index(c, g)] / TAU * 1e3,
                )?;
            }
        }
        Ok(())
    }
}

/// Uniform grid over [0, hi] with exact endpoints.
pub(crate) fn linspace(hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| hi * (i as f64 / (points - 1) as f64))
        .collect()
}

/// Sweep every one of the 2^n - 1 configurations over a uniform ε grid.
///
/// Each data point draws its noise from an RNG derived from (seed, config
/// index, grid index), so results do not depend on evaluation order or
/// thread count. The clean values are retained alongside the noisy ones.
pub fn generate_sweep(
    spec: &SpinSystemSpec,
    grid_points: usize,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<SpectroscopySweep> {
    spec.validate()?;
    if grid_points < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid needs at least 2 points, got {grid_points}"
        )));
    }
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be finite and non-negative, got {noise_sigma}"
        )));
    }
    let configurations = FieldConfiguration::all(spec.n);
    let epsilon_grid = linspace(spec.epsilon_max, grid_points);
    let spec_on = spec.with_coupler(true);
    let spec_off = spec.with_coupler(false);

    let total = configurations.len() * grid_points;
    let pairs: Vec<(f64, f64)> = (0..total)
        .into_par_iter()
        .map(|flat| -> Result<(f64, f64)> {
            let c = flat / grid_points;
            let g = flat % grid_points;
            let config = &configurations[c];
            let eps = epsilon_grid[g];
            let on = transition_energy(&realize_hamiltonian(&spec_on, config, eps)?)?;
            let off = transition_energy(&realize_hamiltonian(&spec_off, config, eps)?)?;
            let clean = on - off;
            let noisy = if noise_sigma > 0.0 {
                let mut rng = seed::rng(seed::derive(noise_seed, &[c as u64, g as u64]));
                let normal = Normal::new(0.0, noise_sigma)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
                clean + normal.sample(&mut rng)
            } else {
                clean
            };
            Ok((clean, noisy))
        })
        .collect::<Result<Vec<_>>>()?;

    let (clean_values, values): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(SpectroscopySweep {
        n: spec.n,
        configurations,
        epsilon_grid,
        values,
        clean_values,
        noise_sigma,
        seed: noise_seed,
    })
}

/// Coherence time equivalent to a Gaussian spectral noise level:
/// T₂ = 1/(2πσ) with σ in GHz and T₂ in ns.
pub fn sigma_to_t2(sigma_ghz: f64) -> Result<f64> {
    if !sigma_ghz.is_finite() || sigma_ghz <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive, got {sigma_ghz}"
        )));
    }
    Ok(1.0 / (TAU * sigma_ghz))
}

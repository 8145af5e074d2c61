//! Locality-constrained least-squares fits of sweep data.
//!
//! The question a fit answers: can the coupler-on data be explained by a
//! model whose couplings stop at locality k? Free parameters are the
//! spurious shifts on every targeted parameter (all of locality ≤ n-1),
//! plus the n-local strength M exactly when k = n. The coupler-off
//! parameters are taken as known and enter only through the fixed baseline.
//!
//! The optimizer is a projected trust-region Levenberg-Marquardt over the
//! stacked residual vector with forward-difference Jacobians, box bounds,
//! and deterministic multistart selection.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{
    add_x_string, add_z_string, realize_hamiltonian, spin_mask, targeted_params, ParamId,
    SpinSystemSpec, TargetSet, DEFAULT_ETA, DEFAULT_M,
};
use crate::pauli::{Axis, Subset};
use crate::seed;
use crate::spectroscopy::{transition_energy, SpectroscopySweep};
use crate::units::to_mhz;

/// Optimizer policy. Defaults follow the library-wide reference scales:
/// shift bounds ±5ηM and M bounds ±10M with η = 1/2, M = 2π × 50 MHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Which parameters are treated as possibly shifted.
    pub target_set: TargetSet,
    /// Number of starts: index 0 is all-zeros, the rest are seeded draws.
    pub multistart: usize,
    pub start_seed: u64,
    /// Uniform half-width for randomized starts (rad/ns).
    pub start_scale: f64,
    /// Box bound ±shift_bound on every spurious shift (rad/ns).
    pub shift_bound: f64,
    /// Box bound ±m_bound on the fitted M (rad/ns).
    pub m_bound: f64,
    /// Forward-difference step (rad/ns).
    pub jacobian_step: f64,
    /// Relative residual-change tolerance.
    pub ftol: f64,
    /// Parameter-change tolerance (rad/ns).
    pub xtol: f64,
    /// Iteration cap per start.
    pub max_iterations: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            target_set: TargetSet::AllNonNlocal,
            multistart: 4,
            start_seed: 0,
            start_scale: DEFAULT_ETA * DEFAULT_M,
            shift_bound: 5.0 * DEFAULT_ETA * DEFAULT_M,
            m_bound: 10.0 * DEFAULT_M,
            jacobian_step: 1e-6 * DEFAULT_M,
            ftol: 1e-12,
            xtol: 1e-10,
            max_iterations: 500,
        }
    }
}

/// Result of one locality-constrained fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitOutcome {
    pub model_locality: usize,
    /// Fitted shifts keyed by parameter (rad/ns).
    pub fitted_spurious: BTreeMap<ParamId, f64>,
    /// Fitted n-local strength; present exactly when model_locality = n.
    pub fitted_m: Option<f64>,
    /// Mean |prediction - noiseless data| (rad/ns).
    pub deviation_vs_clean: f64,
    /// Mean |prediction - noisy data| (rad/ns).
    pub deviation_vs_noisy: f64,
    pub converged: bool,
    /// Accepted sum-of-squares values, first entry is the starting cost.
    pub residual_history: Vec<f64>,
}

impl FitOutcome {
    /// JSON view with frequencies in MHz.
    pub fn export_json(&self) -> serde_json::Value {
        let spurious: serde_json::Map<String, serde_json::Value> = self
            .fitted_spurious
            .iter()
            .map(|(id, v)| (id.to_string(), serde_json::json!(to_mhz(*v))))
            .collect();
        let mut out = serde_json::json!({
            "model_locality": self.model_locality,
            "fitted_spurious_MHz": spurious,
            "deviation_vs_clean_MHz": to_mhz(self.deviation_vs_clean),
            "deviation_vs_noisy_MHz": to_mhz(self.deviation_vs_noisy),
            "converged": self.converged,
            "residual_history": self.residual_history,
        });
        if let Some(m) = self.fitted_m {
            out["fitted_M_MHz"] = serde_json::json!(to_mhz(m));
        }
        out
    }
}

/// Residual evaluation workspace: fixed coupler-off baselines plus one
/// Pauli term per free parameter.
struct Workspace {
    h_off: Vec<DMatrix<f64>>,
    e01_off: Vec<f64>,
    data: Vec<f64>,
    terms: Vec<(Axis, usize)>,
}

impl Workspace {
    fn predictions(&self, theta: &[f64]) -> Result<Vec<f64>> {
        debug_assert_eq!(theta.len(), self.terms.len());
        let mut out = Vec::with_capacity(self.h_off.len());
        for (i, h0) in self.h_off.iter().enumerate() {
            let mut h = h0.clone();
            for (j, &(axis, mask)) in self.terms.iter().enumerate() {
                let c = theta[j];
                if c != 0.0 {
                    match axis {
                        Axis::X => add_x_string(&mut h, mask, c),
                        Axis::Z => add_z_string(&mut h, mask, c),
                    }
                }
            }
            out.push(transition_energy(&h)? - self.e01_off[i]);
        }
        Ok(out)
    }

    fn residuals(&self, theta: &[f64]) -> Result<DVector<f64>> {
        let pred = self.predictions(theta)?;
        Ok(DVector::from_iterator(
            pred.len(),
            pred.iter().zip(&self.data).map(|(p, d)| p - d),
        ))
    }
}

struct StartResult {
    theta: Vec<f64>,
    cost: f64,
    history: Vec<f64>,
    converged: bool,
}

fn clamp(theta: &mut [f64], lo: &[f64], hi: &[f64]) {
    for j in 0..theta.len() {
        theta[j] = theta[j].clamp(lo[j], hi[j]);
    }
}

/// Projected Levenberg-Marquardt from one start.
fn run_start(
    ws: &Workspace,
    start: &[f64],
    lo: &[f64],
    hi: &[f64],
    cfg: &FitConfig,
) -> Result<StartResult> {
    let p = start.len();
    let mut theta = start.to_vec();
    clamp(&mut theta, lo, hi);
    let mut r = ws.residuals(&theta)?;
    let mut cost = r.norm_squared();
    let mut history = vec![cost];
    if p == 0 {
        return Ok(StartResult {
            theta,
            cost,
            history,
            converged: true,
        });
    }
    let mut lambda = 1e-3;
    let mut converged = false;

    'outer: for _iter in 0..cfg.max_iterations {
        // forward-difference Jacobian, stepping inward at the upper bound;
        // the gap observable is a min over eigenvalue branches, so a column
        // can be flat from the right yet sloped from the left (branch tie);
        // rescue such kink columns with a left probe
        let mut jac = DMatrix::<f64>::zeros(r.len(), p);
        for j in 0..p {
            let mut h = cfg.jacobian_step;
            if theta[j] + h > hi[j] {
                h = -h;
            }
            let mut probe = theta.clone();
            probe[j] += h;
            let rj = ws.residuals(&probe)?;
            let mut col: Vec<f64> = (0..r.len()).map(|i| (rj[i] - r[i]) / h).collect();
            let col_max = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if col_max < 1e-5 && theta[j] - h >= lo[j] && theta[j] - h <= hi[j] {
                let mut back = theta.clone();
                back[j] -= h;
                let rb = ws.residuals(&back)?;
                let bcol: Vec<f64> = (0..r.len()).map(|i| (r[i] - rb[i]) / h).collect();
                let bmax = bcol.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if bmax > col_max {
                    col = bcol;
                }
            }
            for i in 0..r.len() {
                jac[(i, j)] = col[i];
            }
        }
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let diag_scale = a.diagonal().amax().max(1e-30);

        let mut accepted = false;
        for _inner in 0..40 {
            let mut damped = a.clone();
            for j in 0..p {
                damped[(j, j)] += lambda * a[(j, j)].max(1e-12 * diag_scale);
            }
            let step = match Cholesky::new(damped) {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut candidate: Vec<f64> =
                (0..p).map(|j| theta[j] + step[j]).collect();
            clamp(&mut candidate, lo, hi);
            let r_new = ws.residuals(&candidate)?;
            let cost_new = r_new.norm_squared();
            if cost_new < cost {
                let max_move = (0..p)
                    .map(|j| (candidate[j] - theta[j]).abs())
                    .fold(0.0f64, f64::max);
                let rel_drop = (cost - cost_new) / cost.max(1e-300);
                theta = candidate;
                r = r_new;
                cost = cost_new;
                history.push(cost);
                lambda = (lambda / 3.0).max(1e-14);
                accepted = true;
                if rel_drop < cfg.ftol || max_move < cfg.xtol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                break;
            }
        }
        if !accepted {
            // no downhill step within the damping budget: treat the current
            // point as a (possibly constrained) optimum
            converged = true;
            break;
        }
    }

    Ok(StartResult {
        theta,
        cost,
        history,
        converged,
    })
}

/// Free parameters for a locality-k model of an n-spin system.
fn free_params(n: usize, k: usize, target_set: TargetSet) -> Vec<ParamId> {
    targeted_params(n, target_set)
        .into_iter()
        .filter(|id| id.locality() <= k.min(n - 1))
        .collect()
}

/// Fit a k-local model to sweep data. k must be n or n-1; only k = n frees
/// the n-local strength M. Deterministic for a fixed config.
pub fn fit_model(
    sweep: &SpectroscopySweep,
    base_spec: &SpinSystemSpec,
    model_locality: usize,
    config: &FitConfig,
) -> Result<FitOutcome> {
    base_spec.validate()?;
    let n = base_spec.n;
    if sweep.n != n {
        return Err(Error::DimensionMismatch(format!(
            "sweep is for {} spins, base spec for {n}",
            sweep.n
        )));
    }
    if model_locality + 1 != n && model_locality != n {
        return Err(Error::InvalidParameter(format!(
            "model locality must be {} or {n}, got {model_locality}",
            n - 1
        )));
    }
    if config.multistart == 0 || config.jacobian_step <= 0.0 || config.max_iterations == 0 {
        return Err(Error::InvalidParameter(
            "multistart, jacobian_step and max_iterations must be positive".into(),
        ));
    }
    let expected = sweep.configurations.len() * sweep.epsilon_grid.len();
    if sweep.values.len() != expected || sweep.clean_values.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "sweep holds {} values for {expected} points",
            sweep.values.len()
        )));
    }

    let params = free_params(n, model_locality, config.target_set);
    let with_m = model_locality == n;

    let mut terms: Vec<(Axis, usize)> = params
        .iter()
        .map(|id| match id {
            ParamId::DeltaX(s) => (Axis::X, spin_mask(&Subset::new([*s]).expect("index"), n)),
            ParamId::EpsilonZ(s) => (Axis::Z, spin_mask(&Subset::new([*s]).expect("index"), n)),
            ParamId::Coupling(key) => (key.axis, spin_mask(&key.subset, n)),
        })
        .collect();
    if with_m {
        terms.push((Axis::Z, spin_mask(&Subset::full(n), n)));
    }
    let p = terms.len();

    // fixed coupler-off baseline per data point
    let off_spec = base_spec.with_coupler(false);
    let mut h_off = Vec::with_capacity(expected);
    let mut e01_off = Vec::with_capacity(expected);
    for config_f in &sweep.configurations {
        for &eps in &sweep.epsilon_grid {
            let h = realize_hamiltonian(&off_spec, config_f, eps)?;
            e01_off.push(transition_energy(&h)?);
            h_off.push(h);
        }
    }
    let ws = Workspace {
        h_off,
        e01_off,
        data: sweep.values.clone(),
        terms,
    };

    let mut lo = vec![-config.shift_bound; params.len()];
    let mut hi = vec![config.shift_bound; params.len()];
    if with_m {
        lo.push(-config.m_bound);
        hi.push(config.m_bound);
    }

    let starts: Vec<Vec<f64>> = (0..config.multistart)
        .map(|s| {
            if s == 0 {
                vec![0.0; p]
            } else {
                let mut rng = seed::rng(seed::derive(config.start_seed, &[s as u64]));
                (0..p)
                    .map(|_| {
                        if config.start_scale > 0.0 {
                            rng.gen_range(-config.start_scale..config.start_scale)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
        })
        .collect();

    let results: Vec<StartResult> = starts
        .par_iter()
        .map(|s| run_start(&ws, s, &lo, &hi, config))
        .collect::<Result<Vec<_>>>()?;
    let best_idx = results
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            a.cost
                .partial_cmp(&b.cost)
                .expect("finite costs")
                .then(ia.cmp(ib))
        })
        .map(|(i, _)| i)
        .expect("at least one start");
    let best = &results[best_idx];

    let pred = ws.predictions(&best.theta)?;
    let points = pred.len() as f64;
    let deviation_vs_noisy = pred
        .iter()
        .zip(&sweep.values)
        .map(|(p, d)| (p - d).abs())
        .sum::<f64>()
        / points;
    let deviation_vs_clean = pred
        .iter()
        .zip(&sweep.clean_values)
        .map(|(p, d)| (p - d).abs())
        .sum::<f64>()
        / points;

    let fitted_spurious: BTreeMap<ParamId, f64> = params
        .iter()
        .cloned()
        .zip(best.theta.iter().copied())
        .collect();
    let fitted_m = with_m.then(|| best.theta[p - 1]);

    Ok(FitOutcome {
        model_locality,
        fitted_spurious,
        fitted_m,
        deviation_vs_clean,
        deviation_vs_noisy,
        converged: best.converged,
        residual_history: best.history.clone(),
    })
}

/// Forward model used inside the fit, exposed for round trips: install the
/// given shifts (and M, when present) as the coupler-on parameters of
/// base_spec and compute noiseless ΔE values over the given grid.
pub fn predict_sweep(
    base_spec: &SpinSystemSpec,
    fitted_spurious: &BTreeMap<ParamId, f64>,
    fitted_m: Option<f64>,
    configurations: &[crate::hamiltonian::FieldConfiguration],
    epsilon_grid: &[f64],
) -> Result<Vec<f64>> {
    let mut on_spec = base_spec.clone();
    on_spec.spurious = fitted_spurious.clone();
    on_spec.m = fitted_m.unwrap_or(0.0);
    on_spec.coupler_on = true;
    let off_spec = base_spec.with_coupler(false);
    let mut out = Vec::with_capacity(configurations.len() * epsilon_grid.len());
    for config in configurations {
        for &eps in epsilon_grid {
            let on = transition_energy(&realize_hamiltonian(&on_spec, config, eps)?)?;
            let off = transition_energy(&realize_hamiltonian(&off_spec, config, eps)?)?;
            out.push(on - off);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{default_spec, sample_spurious, SpuriousModel};
    use crate::spectroscopy::generate_sweep;

    fn quick_config() -> FitConfig {
        FitConfig {
            multistart: 2,
            ..FitConfig::default()
        }
    }

    #[test]
    fn noiseless_full_locality_fit_recovers_truth() {
        let base = default_spec(3, 31).unwrap();
        let truth = sample_spurious(&base, &SpuriousModel::symmetric(0.5, 32)).unwrap();
        let truth = truth.with_coupler(true);
        let sweep = generate_sweep(&truth, 11, 0.0, 0).unwrap();

        let fit = fit_model(&sweep, &base, 3, &quick_config()).unwrap();
        assert!(fit.converged);
        assert!(
            fit.deviation_vs_clean < 1e-6,
            "deviation {}",
            fit.deviation_vs_clean
        );
        let m = fit.fitted_m.expect("full-locality fit frees M");
        assert!(
            (m - truth.m).abs() / truth.m < 1e-4,
            "fitted M {m} vs {}",
            truth.m
        );
        for (id, v) in &fit.fitted_spurious {
            let want = truth.spurious[id];
            assert!(
                (v - want).abs() < 1e-3 * truth.m,
                "{id}: {v} vs {want}"
            );
        }
    }

    #[test]
    fn sub_locality_fit_cannot_absorb_nlocal_data() {
        let base = default_spec(3, 31).unwrap();
        let truth = sample_spurious(&base, &SpuriousModel::symmetric(0.5, 32)).unwrap();
        let truth = truth.with_coupler(true);
        let sweep = generate_sweep(&truth, 11, 0.0, 0).unwrap();

        let full = fit_model(&sweep, &base, 3, &quick_config()).unwrap();
        let sub = fit_model(&sweep, &base, 2, &quick_config()).unwrap();
        assert!(sub.fitted_m.is_none());
        assert!(
            sub.deviation_vs_clean > 10.0 * full.deviation_vs_clean.max(1e-9),
            "sub {} vs full {}",
            sub.deviation_vs_clean,
            full.deviation_vs_clean
        );
        // nesting: the larger model class reaches at least as low a cost
        let full_cost = *full.residual_history.last().unwrap();
        let sub_cost = *sub.residual_history.last().unwrap();
        assert!(full_cost <= sub_cost + 1e-12);
    }

    #[test]
    fn sub_locality_fit_beats_constructed_model() {
        // the fit over all (n-1)-local shifts can only improve on simply
        // reusing the true shifts with M dropped
        let base = default_spec(3, 83).unwrap();
        let truth = sample_spurious(&base, &SpuriousModel::symmetric(0.5, 84)).unwrap();
        let truth = truth.with_coupler(true);
        let sweep = generate_sweep(&truth, 11, 0.0, 0).unwrap();

        let constructed = predict_sweep(
            &base,
            &truth.spurious,
            None,
            &sweep.configurations,
            &sweep.epsilon_grid,
        )
        .unwrap();
        let constructed_dev = constructed
            .iter()
            .zip(&sweep.clean_values)
            .map(|(p, d)| (p - d).abs())
            .sum::<f64>()
            / constructed.len() as f64;

        let sub = fit_model(&sweep, &base, 2, &quick_config()).unwrap();
        assert!(
            sub.deviation_vs_clean <= constructed_dev * (1.0 + 1e-6) + 1e-12,
            "fit {} vs constructed {}",
            sub.deviation_vs_clean,
            constructed_dev
        );
    }

    #[test]
    fn data_without_nlocal_term_fits_m_to_zero() {
        let mut gen_spec = default_spec(3, 55).unwrap();
        gen_spec.m = 0.0;
        let gen_spec = sample_spurious(&gen_spec, &SpuriousModel::symmetric(0.5, 56)).unwrap();
        let sweep = generate_sweep(&gen_spec.with_coupler(true), 11, 0.0, 0).unwrap();

        let mut base = default_spec(3, 55).unwrap();
        base.m = 0.0;
        let fit = fit_model(&sweep, &base, 3, &quick_config()).unwrap();
        let m = fit.fitted_m.unwrap();
        assert!(m.abs() < 1e-3 * DEFAULT_M, "fitted M {m}");
    }

    #[test]
    fn predict_sweep_round_trips_truth() {
        let base = default_spec(3, 61).unwrap();
        let truth = sample_spurious(&base, &SpuriousModel::symmetric(0.5, 62)).unwrap();
        let truth = truth.with_coupler(true);
        let sweep = generate_sweep(&truth, 7, 0.0, 0).unwrap();
        let pred = predict_sweep(
            &base,
            &truth.spurious,
            Some(truth.m),
            &sweep.configurations,
            &sweep.epsilon_grid,
        )
        .unwrap();
        for (p, d) in pred.iter().zip(&sweep.clean_values) {
            assert!((p - d).abs() < 1e-10);
        }

        let zeros = predict_sweep(
            &base,
            &BTreeMap::new(),
            None,
            &sweep.configurations,
            &sweep.epsilon_grid,
        )
        .unwrap();
        assert!(zeros.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn forward_and_central_differences_agree() {
        let base = default_spec(3, 71).unwrap();
        let truth = sample_spurious(&base, &SpuriousModel::symmetric(0.5, 72)).unwrap();
        let truth = truth.with_coupler(true);
        let sweep = generate_sweep(&truth, 5, 0.0, 0).unwrap();
        let h = FitConfig::default().jacobian_step;

        // probe the sensitivity of the forward model to one shift
        let id: ParamId = "JZ[0,1]".parse().unwrap();
        let mut shifts = truth.spurious.clone();
        let predict = |shifts: &BTreeMap<ParamId, f64>| {
            predict_sweep(
                &base,
                shifts,
                Some(truth.m),
                &sweep.configurations,
                &sweep.epsilon_grid,
            )
            .unwrap()
        };
        let p0 = predict(&shifts);
        shifts.insert(id.clone(), truth.spurious[&id] + h);
        let pf = predict(&shifts);
        shifts.insert(id.clone(), truth.spurious[&id] - h);
        let pb = predict(&shifts);

        let mut norm_f = 0.0;
        let mut norm_diff = 0.0;
        for i in 0..p0.len() {
            let fwd = (pf[i] - p0[i]) / h;
            let ctr = (pf[i] - pb[i]) / (2.0 * h);
            norm_f += ctr * ctr;
            norm_diff += (fwd - ctr) * (fwd - ctr);
        }
        assert!(
            norm_diff.sqrt() / norm_f.sqrt() < 1e-4,
            "forward vs central: {}",
            norm_diff.sqrt() / norm_f.sqrt()
        );
    }

    #[test]
    fn rejects_wrong_locality_and_shape() {
        let base = default_spec(3, 1).unwrap();
        let sweep = generate_sweep(&base, 3, 0.0, 0).unwrap();
        assert!(fit_model(&sweep, &base, 1, &quick_config()).is_err());
        assert!(fit_model(&sweep, &base, 4, &quick_config()).is_err());
        let other = default_spec(4, 1).unwrap();
        assert!(fit_model(&sweep, &other, 4, &quick_config()).is_err());
    }

    #[test]
    fn outcome_json_reports_mhz() {
        let base = default_spec(2, 5).unwrap();
        let sweep = generate_sweep(&base.with_coupler(true), 5, 0.0, 0).unwrap();
        let fit = fit_model(&sweep, &base, 2, &quick_config()).unwrap();
        let json = fit.export_json();
        assert!(json["fitted_M_MHz"].is_number());
        assert!(json["deviation_vs_clean_MHz"].is_number());
        assert_eq!(json["model_locality"], 2);
        let sub = fit_model(&sweep, &base, 1, &quick_config());
        // n=2: k=1 is the sub-local model and has no M entry
        let sub = sub.unwrap();
        assert!(sub.export_json().get("fitted_M_MHz").is_none());
    }
}

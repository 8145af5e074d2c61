//! Temporary calibration probe, not part of the suite.

mod common;

use nalgebra::DVector;
use nlocal::dynamics::{
    evolve_lindblad, resonant_frequency, DriveSpec, IntegratorConfig, LindbladSpec,
};
use nlocal::hamiltonian::{default_spec, realize_static, DEFAULT_M};
use nlocal::pauli::{Axis, PauliString, ProductXState, Subset, XSign};
use nlocal::seed;

#[test]
fn probe_closed_oracle_gap() {
    for divisor in [50usize, 100, 200] {
        for n in [2usize, 3] {
            let spec = default_spec(n, seed::derive(2000, &[n as u64])).unwrap();
            let omega = resonant_frequency(&spec).unwrap();
            let drive = DriveSpec::coupler_only(DEFAULT_M, omega);
            let integrator = IntegratorConfig {
                step_divisor: divisor,
                ..IntegratorConfig::default()
            };
            let report = evolve_lindblad(
                &spec,
                &drive,
                &LindbladSpec::closed(),
                20.0,
                ProductXState::uniform(XSign::Minus, n).unwrap().into(),
                &integrator,
            )
            .unwrap();

            let dim = 1usize << n;
            let h_static = realize_static(&spec).unwrap();
            let drive_op = PauliString::new(Axis::Z, Subset::full(n), n)
                .unwrap()
                .realize()
                * DEFAULT_M;
            let norm = 1.0 / (dim as f64).sqrt();
            let x0: Vec<f64> = (0..dim)
                .map(|b: usize| norm * if b.count_ones() % 2 == 0 { 1.0 } else { -1.0 })
                .collect();
            let y0 = vec![0.0; dim];
            let steps_per_sample = (integrator.sample_interval / report.step).round() as usize;
            let states = common::schrodinger_evolve(
                &h_static,
                &drive_op,
                omega,
                &x0,
                &y0,
                report.time_grid.len() - 1,
                steps_per_sample,
                report.step,
            );

            let eig = h_static.clone().symmetric_eigen();
            let mut order: Vec<usize> = (0..dim).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
            let mut max_pop = 0.0f64;
            let mut at_sample = 0usize;
            for (t, (x, y)) in states.iter().enumerate() {
                let xv = DVector::from_column_slice(x);
                let yv = DVector::from_column_slice(y);
                for (k, &col) in order.iter().enumerate() {
                    let v = eig.eigenvectors.column(col);
                    let p_oracle = v.dot(&xv).powi(2) + v.dot(&yv).powi(2);
                    let d = (report.populations[t][k] - p_oracle).abs();
                    if d > max_pop {
                        max_pop = d;
                        at_sample = t;
                    }
                }
            }
            println!(
                "divisor {divisor} n {n}: steps/sample {steps_per_sample}, step {:.5} ns, samples {}, max pop diff {max_pop:.3e} at sample {at_sample}",
                report.step,
                report.time_grid.len() - 1
            );
        }
    }
}

//! Independent numerical oracles used only by tests: a hand-written cyclic
//! Jacobi eigensolver and a state-vector Schrödinger integrator. They share
//! no code with the production paths they check.

use nalgebra::DMatrix;

/// Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations,
/// returned ascending.
pub fn jacobi_eigenvalues(h0: &DMatrix<f64>) -> Vec<f64> {
    let n = h0.nrows();
    assert_eq!(n, h0.ncols(), "square input required");
    let mut a = h0.clone();
    let scale = a.amax().max(1.0);
    for _sweep in 0..200 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut evs: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    evs.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    evs
}

/// Ground-to-first-excited gap from the Jacobi solver.
pub fn transition_energy_oracle(h: &DMatrix<f64>) -> f64 {
    let evs = jacobi_eigenvalues(h);
    evs[1] - evs[0]
}

#[allow(dead_code)]
pub fn relative_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Pure-state Schrödinger integration of ψ = x + iy under
/// H(t) = H_static + cos(ωt)·D, classic fourth-order steps:
///
/// ```text
/// dx/dt =  H(t) y
/// dy/dt = -H(t) x
/// ```
///
/// Returns (x, y) at every sample, starting with the initial state. Works in
/// whatever basis the inputs are expressed in and shares nothing with the
/// density-matrix integrator it cross-checks.
#[allow(dead_code)]
pub fn schrodinger_evolve(
    h_static: &DMatrix<f64>,
    drive: &DMatrix<f64>,
    omega: f64,
    x0: &[f64],
    y0: &[f64],
    samples: usize,
    steps_per_sample: usize,
    h: f64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let dim = h_static.nrows();
    let mut x = nalgebra::DVector::from_column_slice(x0);
    let mut y = nalgebra::DVector::from_column_slice(y0);
    let rhs = |t: f64, x: &nalgebra::DVector<f64>, y: &nalgebra::DVector<f64>| {
        let ht = h_static + drive * (omega * t).cos();
        (&ht * y, -(&ht * x))
    };
    let mut out = Vec::with_capacity(samples + 1);
    out.push((x.as_slice().to_vec(), y.as_slice().to_vec()));
    assert!(dim == x.len() && dim == y.len(), "state length mismatch");
    for sample in 0..samples {
        for step in 0..steps_per_sample {
            let t = (sample * steps_per_sample + step) as f64 * h;
            let (k1x, k1y) = rhs(t, &x, &y);
            let (k2x, k2y) = rhs(t + 0.5 * h, &(&x + 0.5 * h * &k1x), &(&y + 0.5 * h * &k1y));
            let (k3x, k3y) = rhs(t + 0.5 * h, &(&x + 0.5 * h * &k2x), &(&y + 0.5 * h * &k2y));
            let (k4x, k4y) = rhs(t + h, &(&x + h * &k3x), &(&y + h * &k3y));
            x += h / 6.0 * (&k1x + 2.0 * (&k2x + &k3x) + &k4x);
            y += h / 6.0 * (&k1y + 2.0 * (&k2y + &k3y) + &k4y);
        }
        out.push((x.as_slice().to_vec(), y.as_slice().to_vec()));
    }
    out
}

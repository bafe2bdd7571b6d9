//! Iterative reference for the closed-form ridge solve.

use regionvec_core::rng::SplitMix64;
use regionvec_core::Matrix;

pub fn normal_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Gradient descent on `‖y − ȳ − Xβ‖² + λ‖β‖²` with step `1 / L`.
pub fn gd_oracle(x: &Matrix, y: &[f64], lambda: f64) -> Vec<f64> {
    let (m, d) = x.shape();
    let ybar = y.iter().sum::<f64>() / m as f64;
    let mut gram = vec![vec![0.0; d]; d];
    for i in 0..m {
        for a in 0..d {
            for b in 0..d {
                gram[a][b] += x[(i, a)] * x[(i, b)];
            }
        }
    }
    // Gershgorin bound on the largest eigenvalue.
    let lmax = (0..d)
        .map(|a| gram[a].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        + lambda;
    let step = 1.0 / (2.0 * lmax);
    let mut beta = vec![0.0; d];
    for _ in 0..200_000 {
        let mut grad = vec![0.0; d];
        for i in 0..m {
            let r: f64 = (0..d).map(|a| x[(i, a)] * beta[a]).sum::<f64>() - (y[i] - ybar);
            for a in 0..d {
                grad[a] += 2.0 * r * x[(i, a)];
            }
        }
        let mut moved: f64 = 0.0;
        for a in 0..d {
            let delta = step * (grad[a] + 2.0 * lambda * beta[a]);
            beta[a] -= delta;
            moved = moved.max(delta.abs());
        }
        if moved < 1e-15 {
            break;
        }
    }
    beta
}

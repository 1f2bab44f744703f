//! Log-domain Sinkhorn iterations for entropically regularized transport.
//!
//! The coupling is `P_ij = exp((f_i + g_j - C_ij) / epsilon)`; the reported
//! objective is the transport cost `<C, P>` without the entropy term, which
//! overestimates the exact optimum by `O(epsilon log(mn))`.

use ndarray::{Array2, ArrayView2};

use super::{OtError, SolveMethod, TransportSolution};

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(super) fn solve(
    cost: ArrayView2<'_, f64>,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportSolution, OtError> {
    if !(epsilon > 0.0) {
        return Err(OtError::InvalidTolerance(epsilon));
    }
    let (m, n) = cost.dim();
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut error = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        for i in 0..m {
            let lse = logsumexp((0..n).map(|j| (g[j] - cost[[i, j]]) / epsilon));
            f[i] = epsilon * (log_a[i] - lse);
        }
        for j in 0..n {
            let lse = logsumexp((0..m).map(|i| (f[i] - cost[[i, j]]) / epsilon));
            g[j] = epsilon * (log_b[j] - lse);
        }
        // columns are exact after the g-update; measure the row marginals
        error = 0.0;
        for i in 0..m {
            let row: f64 = (0..n)
                .map(|j| ((f[i] + g[j] - cost[[i, j]]) / epsilon).exp())
                .sum();
            error = error.max((row - a[i]).abs());
        }
        if error <= tol {
            break;
        }
    }
    if error > tol {
        return Err(OtError::NotConverged { iterations, error });
    }

    let mut plan = Array2::zeros((m, n));
    let mut objective = 0.0;
    for i in 0..m {
        for j in 0..n {
            let p = ((f[i] + g[j] - cost[[i, j]]) / epsilon).exp();
            plan[[i, j]] = p;
            objective += p * cost[[i, j]];
        }
    }
    // zero-mass points have -inf potentials; report their c-transform instead
    let g_finite: Vec<f64> = g.iter().map(|&x| if x.is_finite() { x } else { 0.0 }).collect();
    for i in 0..m {
        if !f[i].is_finite() {
            f[i] = (0..n)
                .map(|j| cost[[i, j]] - g_finite[j])
                .fold(f64::INFINITY, f64::min);
        }
    }
    for j in 0..n {
        if !g[j].is_finite() {
            g[j] = (0..m)
                .map(|i| cost[[i, j]] - f[i])
                .fold(f64::INFINITY, f64::min);
        }
    }
    Ok(TransportSolution {
        plan,
        objective,
        dual_f: f,
        dual_g: g,
        method: SolveMethod::Entropic,
        duality_gap: 0.0,
    })
}

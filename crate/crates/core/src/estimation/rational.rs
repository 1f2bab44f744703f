//! The rational baseline `sum_i 1 / (sum_j c_ij p_j) + b ln N`, fitted by
//! multi-start Levenberg-Marquardt.

use nalgebra::{DMatrix, DVector};

use super::estimator::{ridge_solve, RATIONAL_FLOOR};
use super::{EstimationError, TrialRecord};

fn denominators(c: &[f64], m: usize, p: &[f64]) -> Vec<f64> {
    (0..m)
        .map(|i| (0..m).map(|j| c[i * m + j] * p[j]).sum::<f64>())
        .collect()
}

pub(super) fn evaluate(params: &[f64], m: usize, p: &[f64], n: usize) -> f64 {
    let b = params[m * m];
    denominators(params, m, p)
        .into_iter()
        .map(|d| 1.0 / d.max(RATIONAL_FLOOR))
        .sum::<f64>()
        + b * (n as f64).ln()
}

pub(super) fn gradient_p(params: &[f64], m: usize, p: &[f64]) -> Vec<f64> {
    let dens = denominators(params, m, p);
    (0..m)
        .map(|k| {
            (0..m)
                .filter(|&i| dens[i] > RATIONAL_FLOOR)
                .map(|i| -params[i * m + k] / (dens[i] * dens[i]))
                .sum()
        })
        .collect()
}

/// Residuals and Jacobian with respect to all parameters.
fn linearize(params: &[f64], m: usize, records: &[TrialRecord]) -> (DVector<f64>, DMatrix<f64>) {
    let k = m * m + 1;
    let mut r = DVector::zeros(records.len());
    let mut jac = DMatrix::zeros(records.len(), k);
    for (row, rec) in records.iter().enumerate() {
        r[row] = evaluate(params, m, &rec.p, rec.n) - rec.v;
        let dens = denominators(params, m, &rec.p);
        for i in 0..m {
            if dens[i] > RATIONAL_FLOOR {
                for j in 0..m {
                    jac[(row, i * m + j)] = -rec.p[j] / (dens[i] * dens[i]);
                }
            }
        }
        jac[(row, m * m)] = (rec.n as f64).ln();
    }
    (r, jac)
}

fn sse(params: &[f64], m: usize, records: &[TrialRecord], ridge: f64) -> f64 {
    records
        .iter()
        .map(|rec| (evaluate(params, m, &rec.p, rec.n) - rec.v).powi(2))
        .sum::<f64>()
        + ridge * params.iter().map(|x| x * x).sum::<f64>()
}

fn levenberg_marquardt(mut params: Vec<f64>, m: usize, records: &[TrialRecord], ridge: f64) -> (Vec<f64>, f64) {
    let mut lambda = 1e-3;
    let mut cost = sse(&params, m, records, ridge);
    for _ in 0..500 {
        let (r, jac) = linearize(&params, m, records);
        let jt = jac.transpose();
        let mut normal = &jt * &jac;
        let theta = DVector::from_column_slice(&params);
        let rhs = -(&jt * &r) - &theta * ridge;
        let diag: Vec<f64> = (0..normal.nrows()).map(|i| normal[(i, i)]).collect();
        let mut improved = false;
        for _ in 0..30 {
            for (i, &d) in diag.iter().enumerate() {
                normal[(i, i)] = d + lambda * d.max(1e-12) + ridge;
            }
            let Some(step) = normal.clone().cholesky().map(|c| c.solve(&rhs)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate: Vec<f64> = params.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let c = sse(&candidate, m, records, ridge);
            if c.is_finite() && c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                params = candidate;
                cost = c;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                if rel < 1e-15 {
                    return (params, cost);
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved || cost < 1e-28 {
            break;
        }
    }
    (params, cost)
}

/// The ridge is not applied to the raw `c` (its scale is arbitrary and would
/// bias noise-free fits); LM damping keeps the steps well posed instead.
pub(super) fn fit(records: &[TrialRecord], m: usize) -> Result<Vec<f64>, EstimationError> {
    let ridge = 0.0_f64;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for &scale in &[0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
        for &coupling in &[0.0, 0.5, 1.0] {
            let mut start = vec![0.0; m * m + 1];
            for i in 0..m {
                for j in 0..m {
                    start[i * m + j] = if i == j { scale } else { scale * coupling };
                }
            }
            // b enters linearly: initialize it by least squares given c
            let offsets: Vec<f64> = records
                .iter()
                .map(|rec| rec.v - evaluate(&start, m, &rec.p, rec.n))
                .collect();
            let x = DMatrix::from_fn(records.len(), 1, |i, _| (records[i].n as f64).ln());
            start[m * m] = ridge_solve(&x, &DVector::from_vec(offsets), ridge.max(1e-12))?[0];
            let (params, cost) = levenberg_marquardt(start, m, records, ridge);
            if best.as_ref().is_none_or(|(_, c)| cost < *c) {
                best = Some((params, cost));
            }
        }
    }
    Ok(best.expect("at least one start").0)
}

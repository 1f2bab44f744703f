use serde::{Deserialize, Serialize};

use super::{EstimationError, FittedEstimator};
use crate::fedwad::CombineWadResult;

/// Two-scale log-linear extrapolation: the value at `n` of the line through
/// `(ln n_i, v_i)` and `(ln n_j, v_j)`.
pub fn project_scale(v_i: f64, v_j: f64, n_i: usize, n_j: usize, n: usize) -> Result<f64, EstimationError> {
    let (li, lj) = projection_weights(n_i, n_j, n)?;
    Ok(li * v_i + lj * v_j)
}

/// Coefficients `(l_i, l_j)` with `project_scale = l_i v_i + l_j v_j`.
pub fn projection_weights(n_i: usize, n_j: usize, n: usize) -> Result<(f64, f64), EstimationError> {
    if n_i == 0 || n_j == 0 || n == 0 {
        return Err(EstimationError::InvalidBudget("budgets must be positive".into()));
    }
    if n_i == n_j {
        return Err(EstimationError::InvalidBudget(format!("projection needs two distinct scales, got {n_i} twice")));
    }
    let (ni, nj, nn) = (n_i as f64, n_j as f64, n as f64);
    let span = (nj / ni).ln();
    // exact endpoint identities
    if n == n_i {
        return Ok((1.0, 0.0));
    }
    if n == n_j {
        return Ok((0.0, 1.0));
    }
    Ok((-(nn / nj).ln() / span, (nn / ni).ln() / span))
}

/// Smallest budget in `[lo, hi]` whose projected performance reaches
/// `target`, by bisection; `None` if even `hi` falls short.
pub fn min_budget_for_target(
    v_i: f64,
    v_j: f64,
    n_i: usize,
    n_j: usize,
    target: f64,
    lo: usize,
    hi: usize,
) -> Result<Option<usize>, EstimationError> {
    let reaches = |n: usize| project_scale(v_i, v_j, n_i, n_j, n).map(|v| v >= target - 1e-12);
    if lo == 0 || lo > hi {
        return Err(EstimationError::InvalidBudget(format!("bad search range [{lo}, {hi}]")));
    }
    if !reaches(hi)? {
        return Ok(None);
    }
    if reaches(lo)? {
        return Ok(Some(lo));
    }
    let (mut bad, mut good) = (lo, hi);
    while good - bad > 1 {
        let mid = bad + (good - bad) / 2;
        if reaches(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(Some(good))
}

/// `df/dp + df/dW * dW/dp`, with `dW/dp` given per source.
pub fn ratio_gradient_with(
    est: &FittedEstimator,
    p: &[f64],
    w: f64,
    n: usize,
    dw_dp: &[f64],
) -> Result<Vec<f64>, EstimationError> {
    if dw_dp.len() != est.m {
        return Err(EstimationError::DimensionMismatch { expected: est.m, got: dw_dp.len() });
    }
    let (dp, dw) = est.partials(p, w, n)?;
    Ok(dp.iter().zip(dw_dp).map(|(a, s)| a + dw * s).collect())
}

/// Gradient of the estimator with respect to the mixing ratio, using the
/// per-source calibrated gradients of the pooled distance as `dW/dp`.
pub fn ratio_gradient(
    est: &FittedEstimator,
    p: &[f64],
    cw: &CombineWadResult,
    n: usize,
) -> Result<Vec<f64>, EstimationError> {
    ratio_gradient_with(est, p, cw.value, n, &cw.per_source_scores)
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

pub fn on_simplex(p: &[f64], tol: f64) -> bool {
    p.iter().all(|&x| x >= -tol) && (p.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// A distance and its per-source sensitivities for a mixing ratio at a budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEval {
    pub w: f64,
    pub dw_dp: Vec<f64>,
}

/// Supplies `W(D(N, p), D_val)` for the optimizer. Implementations must be
/// deterministic functions of `(p, n)`.
pub trait WassersteinOracle {
    fn evaluate(&mut self, p: &[f64], n: usize) -> Result<DistanceEval, EstimationError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub alpha0: f64,
    /// Halvings tried before a step is abandoned.
    pub max_halvings: usize,
    /// Largest surrogate decrease a step may cause. The distance oracle is
    /// piecewise constant in `p`, so exact monotonicity would stall on
    /// rounding-level roughness.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    1e-3
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            alpha0: 0.1,
            max_halvings: 12,
            tolerance: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub p: Vec<f64>,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    pub trajectory: Vec<TrajectoryPoint>,
    /// Set when more than five consecutive steps saw no usable gradient.
    pub stopped_early: bool,
}

impl OptimizeOutcome {
    pub fn final_point(&self) -> &TrajectoryPoint {
        self.trajectory.last().expect("trajectory starts with p0")
    }
}

/// Projected surrogate at budget `n` and its gradient in `p`.
fn projected_value(
    est_i: &FittedEstimator,
    est_j: &FittedEstimator,
    n: usize,
    p: &[f64],
    oracle: &mut dyn WassersteinOracle,
) -> Result<(f64, Vec<f64>), EstimationError> {
    let (li, lj) = projection_weights(est_i.n_fit, est_j.n_fit, n)?;
    let mut value = 0.0;
    let mut grad = vec![0.0; p.len()];
    for (est, coef) in [(est_i, li), (est_j, lj)] {
        if coef == 0.0 {
            continue;
        }
        let needs_w = est.kind.uses_distance();
        let d = if needs_w {
            oracle.evaluate(p, est.n_fit)?
        } else {
            DistanceEval {
                w: 0.0,
                dw_dp: vec![0.0; p.len()],
            }
        };
        value += coef * est.evaluate(p, d.w, est.n_fit)?;
        let g = ratio_gradient_with(est, p, d.w, est.n_fit, &d.dw_dp)?;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += coef * b);
    }
    Ok((value, grad))
}

/// Projected gradient ascent on the scale-projected surrogate. Steps shrink
/// as `alpha0 / sqrt(t + 1)` and are halved until the surrogate drops by at
/// most `tolerance`; a step that cannot satisfy this leaves `p` in place.
pub fn optimize_ratio(
    est_pair: (&FittedEstimator, &FittedEstimator),
    n: usize,
    p0: &[f64],
    steps: usize,
    schedule: &StepSchedule,
    oracle: &mut dyn WassersteinOracle,
) -> Result<OptimizeOutcome, EstimationError> {
    let (est_i, est_j) = est_pair;
    if est_i.m != p0.len() || est_j.m != p0.len() {
        return Err(EstimationError::DimensionMismatch { expected: est_i.m, got: p0.len() });
    }
    if !on_simplex(p0, 1e-9) {
        return Err(EstimationError::OffSimplex(p0.to_vec()));
    }
    if steps == 0 {
        return Err(EstimationError::InvalidBudget("optimize_ratio needs at least one step".into()));
    }
    let mut p = p0.to_vec();
    let (mut value, mut grad) = projected_value(est_i, est_j, n, &p, oracle)?;
    let mut trajectory = vec![TrajectoryPoint {
        p: p.clone(),
        predicted: value,
    }];
    let mut idle = 0usize;
    let mut stopped_early = false;
    for t in 0..steps {
        // only the component tangent to the simplex can move p
        let mean = grad.iter().sum::<f64>() / grad.len() as f64;
        let tangent_norm = grad.iter().map(|g| (g - mean).powi(2)).sum::<f64>().sqrt();
        if tangent_norm < 1e-12 {
            idle += 1;
            if idle > 5 {
                stopped_early = true;
                break;
            }
            trajectory.push(TrajectoryPoint {
                p: p.clone(),
                predicted: value,
            });
            continue;
        }
        idle = 0;
        let mut alpha = schedule.alpha0 / ((t + 1) as f64).sqrt();
        for _ in 0..=schedule.max_halvings {
            let candidate = project_simplex(&p.iter().zip(&grad).map(|(x, g)| x + alpha * g).collect::<Vec<_>>());
            let (v, g) = projected_value(est_i, est_j, n, &candidate, oracle)?;
            if v >= value - schedule.tolerance {
                p = candidate;
                value = v;
                grad = g;
                break;
            }
            alpha *= 0.5;
        }
        trajectory.push(TrajectoryPoint {
            p: p.clone(),
            predicted: value,
        });
    }
    Ok(OptimizeOutcome {
        trajectory,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::EstimatorKind;

    #[test]
    fn projection_identities() {
        assert_eq!(project_scale(0.6, 0.7, 4000, 8000, 8000).unwrap(), 0.7);
        assert_eq!(project_scale(0.6, 0.7, 4000, 8000, 4000).unwrap(), 0.6);
        assert!((project_scale(0.6, 0.7, 4000, 8000, 16000).unwrap() - 0.8).abs() < 1e-12);
        assert!(project_scale(0.6, 0.7, 10, 10, 20).is_err());
    }

    #[test]
    fn bisection_finds_smallest_budget() {
        // V(N) = 0.6 + 0.1 log2(N / 4000)
        let n = min_budget_for_target(0.6, 0.7, 4000, 8000, 0.8, 1, 1_000_000).unwrap().unwrap();
        assert_eq!(n, 16000);
        assert!(min_budget_for_target(0.6, 0.7, 4000, 8000, 2.0, 1, 100_000).unwrap().is_none());
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
        let q = project_simplex(&[0.6, 0.6, -0.3]);
        assert!((q[0] - 0.5).abs() < 1e-15 && (q[1] - 0.5).abs() < 1e-15 && q[2] == 0.0);
    }

    struct Fixed(Vec<f64>);

    impl WassersteinOracle for Fixed {
        fn evaluate(&mut self, _p: &[f64], _n: usize) -> Result<DistanceEval, EstimationError> {
            Ok(DistanceEval {
                w: 1.0,
                dw_dp: self.0.clone(),
            })
        }
    }

    #[test]
    fn zero_gradient_keeps_p0() {
        let est = FittedEstimator::from_params(EstimatorKind::AffineCombinewad, 3, vec![-0.3, 0.9], 100).unwrap();
        let est2 = FittedEstimator { n_fit: 200, ..est.clone() };
        let p0 = [0.2, 0.3, 0.5];
        let out = optimize_ratio((&est, &est2), 400, &p0, 10, &StepSchedule::default(), &mut Fixed(vec![0.4; 3])).unwrap();
        assert!(out.stopped_early);
        assert!(out.trajectory.iter().all(|t| t.p == p0));
    }

    #[test]
    fn affine_gradient_is_scaled_scores() {
        let est = FittedEstimator::from_params(EstimatorKind::AffineCombinewad, 3, vec![-0.3, 0.9], 100).unwrap();
        let g = ratio_gradient_with(&est, &[0.2, 0.3, 0.5], 1.0, 100, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(g, vec![-0.3, 0.6, -0.15]);
    }
}

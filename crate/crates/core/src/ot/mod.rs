//! Discrete optimal transport.
//!
//! The exact backend is a primal network simplex on the dense transportation
//! problem; its spanning-tree basis yields dual potentials `(f, g)` with
//! `f_i + g_j <= C_ij` and equality on the support of the plan. The entropic
//! backend (log-domain Sinkhorn) trades a bias of order `epsilon` for speed and
//! is never used where duals feed data valuation.

mod cost;
mod measure;
mod network_simplex;
mod sinkhorn;
mod valuation;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cost::{build_cost, build_cost_with, default_label_penalty, pairwise_cost, GroundCost, CostMatrix};
pub use measure::{check_mass_vector, DiscreteMeasure, MASS_TOL};
pub use valuation::{calibrated_gradients, calibrated_gradients_with, select_top_k, CalibratedScores, Side};

/// Largest tolerated difference between total source and target mass.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OtError {
    #[error("measure has no points")]
    EmptyMeasure,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid masses: {0}")]
    InvalidMasses(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("label penalty {0} requires labels on both measures")]
    MissingLabels(f64),
    #[error("negative label penalty {0}")]
    NegativePenalty(f64),
    #[error("infeasible marginals: source mass {source_mass} vs target mass {target_mass}")]
    Infeasible { source_mass: f64, target_mass: f64 },
    #[error("entropic solver did not converge in {iterations} iterations (marginal error {error:e})")]
    NotConverged { iterations: usize, error: f64 },
    #[error("network simplex failed: {0}")]
    Simplex(String),
    #[error("calibrated gradients need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("calibrated gradients require an exact solution; pass allow_entropic to override")]
    EntropicDuals,
    #[error("k = {k} out of range for {m} scores")]
    KOutOfRange { k: usize, m: usize },
    #[error("invalid tolerance {0}")]
    InvalidTolerance(f64),
}

/// Solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    Exact,
    Entropic { epsilon: f64, max_iter: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMethod {
    Exact,
    Entropic,
}

/// Optimal coupling together with dual potentials.
///
/// Duals are canonicalized so that `dual_g[0] == 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportSolution {
    pub plan: Array2<f64>,
    pub objective: f64,
    pub dual_f: Vec<f64>,
    pub dual_g: Vec<f64>,
    pub method: SolveMethod,
    pub duality_gap: f64,
}

impl TransportSolution {
    pub fn dual_objective(&self, a: &[f64], b: &[f64]) -> f64 {
        dot(&self.dual_f, a) + dot(&self.dual_g, b)
    }

    /// Largest absolute deviation of the plan's marginals from `(a, b)`.
    pub fn marginal_violation(&self, a: &[f64], b: &[f64]) -> f64 {
        let rows = self.plan.rows().into_iter().map(|r| r.sum());
        let cols = self.plan.columns().into_iter().map(|c| c.sum());
        rows.zip(a)
            .map(|(r, x)| (r - x).abs())
            .chain(cols.zip(b).map(|(c, y)| (c - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Largest violation of `f_i + g_j <= C_ij`.
    pub fn dual_infeasibility(&self, cost: ArrayView2<'_, f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for ((i, j), c) in cost.indexed_iter() {
            worst = worst.max(self.dual_f[i] + self.dual_g[j] - c);
        }
        worst
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Solve the transportation problem `min <C, P>` over couplings of `(a, b)`.
pub fn solve(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    method: Method,
    tol: f64,
) -> Result<TransportSolution, OtError> {
    solve_dense(cost.values.view(), a, b, method, tol)
}

/// [`solve`] on a raw cost matrix view.
pub fn solve_dense(
    cost: ArrayView2<'_, f64>,
    a: &[f64],
    b: &[f64],
    method: Method,
    tol: f64,
) -> Result<TransportSolution, OtError> {
    if !(tol > 0.0) {
        return Err(OtError::InvalidTolerance(tol));
    }
    let (m, n) = cost.dim();
    if a.len() != m || b.len() != n {
        return Err(OtError::Shape(format!(
            "cost is {m}x{n} but marginals have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if m == 0 || n == 0 {
        return Err(OtError::EmptyMeasure);
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(OtError::NonFinite("cost"));
    }
    if a.iter().chain(b).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(OtError::InvalidMasses("negative or non-finite mass".into()));
    }
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    if (sa - sb).abs() > FEASIBILITY_TOL {
        return Err(OtError::Infeasible {
            source_mass: sa,
            target_mass: sb,
        });
    }
    let mut sol = match method {
        Method::Exact => network_simplex::solve(cost, a, b)?,
        Method::Entropic { epsilon, max_iter } => {
            sinkhorn::solve(cost, a, b, epsilon, max_iter, tol)?
        }
    };
    // canonical gauge: g_0 = 0
    let shift = sol.dual_g[0];
    sol.dual_g.iter_mut().for_each(|g| *g -= shift);
    sol.dual_f.iter_mut().for_each(|f| *f += shift);
    sol.duality_gap = sol.objective - sol.dual_objective(a, b);
    if sol.method == SolveMethod::Exact && sol.duality_gap.abs() > tol.max(1e-12) {
        log::warn!(
            "exact solve finished with duality gap {:e} above tolerance {:e}",
            sol.duality_gap,
            tol
        );
    }
    Ok(sol)
}

/// Exact Wasserstein distance between two measures under the linear
/// Euclidean ground cost plus an optional label penalty.
pub fn wasserstein(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    label_penalty: f64,
) -> Result<f64, OtError> {
    let cost = build_cost(mu, nu, label_penalty)?;
    Ok(solve(&cost, mu.masses(), nu.masses(), Method::Exact, 1e-9)?.objective)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn exact(c: Array2<f64>, a: &[f64], b: &[f64]) -> TransportSolution {
        solve_dense(c.view(), a, b, Method::Exact, 1e-9).unwrap()
    }

    #[test]
    fn unique_feasible_plan() {
        let s = exact(array![[2.0], [1.0]], &[0.5, 0.5], &[1.0]);
        assert!((s.objective - 1.5).abs() < 1e-15);
        assert_eq!(s.plan, array![[0.5], [0.5]]);
        assert_eq!(s.dual_g[0], 0.0);
        assert!(s.duality_gap.abs() < 1e-12);
    }

    #[test]
    fn identity_case() {
        let s = exact(array![[0.0, 1.0], [1.0, 0.0]], &[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(s.objective, 0.0);
        assert_eq!(s.plan, array![[0.5, 0.0], [0.0, 0.5]]);
    }

    #[test]
    fn rejects_infeasible_and_bad_tolerance() {
        let c = array![[1.0, 2.0]];
        assert!(matches!(
            solve_dense(c.view(), &[1.0], &[0.5, 0.4], Method::Exact, 1e-9),
            Err(OtError::Infeasible { .. })
        ));
        assert!(matches!(
            solve_dense(c.view(), &[1.0], &[0.5, 0.5], Method::Exact, 0.0),
            Err(OtError::InvalidTolerance(_))
        ));
    }

    #[test]
    fn entropic_close_to_exact_on_small_problem() {
        let c = array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]];
        let a = [0.2, 0.5, 0.3];
        let b = [0.4, 0.4, 0.2];
        let ex = exact(c.clone(), &a, &b);
        let en = solve_dense(
            c.view(),
            &a,
            &b,
            Method::Entropic {
                epsilon: 1e-3,
                max_iter: 100_000,
            },
            1e-9,
        )
        .unwrap();
        assert_eq!(en.method, SolveMethod::Entropic);
        assert!((ex.objective - en.objective).abs() < 1e-2);
        assert!(en.marginal_violation(&a, &b) < 1e-6);
    }

    #[test]
    fn entropic_reports_non_convergence() {
        let c = array![[0.0, 5.0], [5.0, 0.0]];
        let r = solve_dense(
            c.view(),
            &[0.5, 0.5],
            &[0.1, 0.9],
            Method::Entropic {
                epsilon: 1e-4,
                max_iter: 1,
            },
            1e-12,
        );
        assert!(matches!(r, Err(OtError::NotConverged { .. })));
    }
}

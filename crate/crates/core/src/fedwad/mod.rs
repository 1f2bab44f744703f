//! Private Wasserstein approximation through interpolating measures.
//!
//! Every party pushes its data part of the way (`t`) towards a shared random
//! Gaussian measure along its own optimal plan. Only the interpolated points
//! leave the party. Distances between interpolating measures, rescaled by
//! `1 / (1 - t)`, approximate distances between the raw datasets; stacking
//! several sellers' cost blocks against the buyer's measure approximates the
//! distance between the pooled sellers' data and the validation data
//! (CombineWad), and the duals of that pooled problem value every seller.

use std::ops::Range;

use ndarray::{Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ot::{
    self, pairwise_cost, CalibratedScores, DiscreteMeasure, GroundCost, Method, OtError,
    TransportSolution,
};
use crate::seed;



/// Default push-forward parameter.
pub const DEFAULT_T: f64 = 0.5;
/// Default privacy floor on `t`.
pub const DEFAULT_T_MIN: f64 = 0.3;

#[derive(Debug, Error)]
pub enum FedWadError {
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error("invalid shared-measure spec: {0}")]
    InvalidSpec(String),
    #[error("push-forward parameter t = {0} must lie in [0, 1)")]
    InvalidT(f64),
    #[error("t = {t} is below the privacy floor {t_min}")]
    BelowPrivacyFloor { t: f64, t_min: f64 },
    #[error("mismatched push-forward parameters {0} and {1}")]
    MismatchedT(f64, f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no seller measures supplied")]
    NoSellers,
    #[error("mixing weights must lie on the simplex: {0}")]
    OffSimplex(String),
    #[error("index {index} out of range for source {source_index} with {rows} rows")]
    IndexOutOfRange {
        source_index: usize,
        index: usize,
        rows: usize,
    },
    #[error("duplicate index {index} in source {source_index}")]
    DuplicateIndex { source_index: usize, index: usize },
    #[error("expected index lists for {expected} sources, got {got}")]
    SourceCount { expected: usize, got: usize },
    #[error("pooled selection is empty")]
    EmptySelection,
}

/// Parameters of the globally shared Gaussian anchor measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharedMeasureSpec {
    pub seed: u64,
    pub k: usize,
    pub d: usize,
    pub mean: f64,
    pub std: f64,
}

impl SharedMeasureSpec {
    pub fn validate(&self) -> Result<(), FedWadError> {
        if self.k == 0 {
            return Err(FedWadError::InvalidSpec("k must be >= 1".into()));
        }
        if self.d == 0 {
            return Err(FedWadError::InvalidSpec("d must be >= 1".into()));
        }
        if !(self.std > 0.0) || !self.mean.is_finite() {
            return Err(FedWadError::InvalidSpec(format!(
                "need finite mean and std > 0, got mean {} std {}",
                self.mean, self.std
            )));
        }
        Ok(())
    }

    /// Warn when `std^2 > sqrt(2 / (p_a^2 + p_b^2))` for the masses of two
    /// parties of sizes `n_a`, `n_b`; the approximation bound assumes the
    /// shared measure is not too spread out.
    pub fn spread_warning(&self, n_a: usize, n_b: usize) -> Option<String> {
        let pa = 1.0 / n_a.max(1) as f64;
        let pb = 1.0 / n_b.max(1) as f64;
        let limit = (2.0 / (pa * pa + pb * pb)).sqrt();
        (self.std * self.std > limit).then(|| {
            format!(
                "shared measure variance {} exceeds sqrt(2/(pa^2+pb^2)) = {limit:.3}",
                self.std * self.std
            )
        })
    }
}

/// `k x d` i.i.d. `N(mean, std^2)` points with uniform masses; equal specs
/// give identical output.
pub fn sample_shared_measure(spec: &SharedMeasureSpec) -> Result<DiscreteMeasure, FedWadError> {
    spec.validate()?;
    let normal = Normal::new(spec.mean, spec.std)
        .map_err(|e| FedWadError::InvalidSpec(e.to_string()))?;
    let mut rng = seed::rng(seed::derive(spec.seed, "shared-measure"));
    let points = Array2::from_shape_fn((spec.k, spec.d), |_| normal.sample(&mut rng));
    Ok(DiscreteMeasure::uniform(points, None)?)
}

/// Whether to refuse interpolating measures below a push-forward floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyPolicy {
    pub t_min: f64,
    pub enforce: bool,
}

impl Default for PrivacyPolicy {
    fn default() -> Self {
        Self {
            t_min: DEFAULT_T_MIN,
            enforce: true,
        }
    }
}

impl PrivacyPolicy {
    pub fn disabled() -> Self {
        Self {
            t_min: 0.0,
            enforce: false,
        }
    }

    pub fn check(&self, t: f64) -> Result<(), FedWadError> {
        if !(0.0..1.0).contains(&t) {
            return Err(FedWadError::InvalidT(t));
        }
        if self.enforce && t < self.t_min {
            return Err(FedWadError::BelowPrivacyFloor {
                t,
                t_min: self.t_min,
            });
        }
        Ok(())
    }
}

/// A party's privacy-preserving surrogate measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolatingMeasure {
    pub t: f64,
    pub points: Array2<f64>,
    pub masses: Vec<f64>,
    /// Labels travel unchanged with the interpolated points.
    pub labels: Option<Vec<usize>>,
    pub owner: String,
    pub source_size: usize,
}

impl InterpolatingMeasure {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn as_measure(&self) -> Result<DiscreteMeasure, FedWadError> {
        Ok(DiscreteMeasure::uniform(self.points.clone(), self.labels.clone())?)
    }

    /// Reassemble from transmitted fields; masses are uniform by construction.
    pub fn from_parts(
        owner: impl Into<String>,
        t: f64,
        points: Array2<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, FedWadError> {
        if !(0.0..1.0).contains(&t) {
            return Err(FedWadError::InvalidT(t));
        }
        let n = points.nrows();
        if n == 0 {
            return Err(FedWadError::Ot(OtError::EmptyMeasure));
        }
        Ok(Self {
            t,
            masses: vec![1.0 / n as f64; n],
            points,
            labels,
            owner: owner.into(),
            source_size: n,
        })
    }
}

/// Push `local` a fraction `t` of the way towards its barycentric projection
/// onto `shared`: `(1 - t) x_i + t (P x_shared)_i / a_i`, where `P` is the
/// exact feature-only plan between the two.
pub fn barycentric_interpolate(
    local: &DiscreteMeasure,
    shared: &DiscreteMeasure,
    t: f64,
    owner: &str,
    policy: &PrivacyPolicy,
) -> Result<InterpolatingMeasure, FedWadError> {
    policy.check(t)?;
    if local.dim() != shared.dim() {
        return Err(FedWadError::DimensionMismatch(local.dim(), shared.dim()));
    }
    let n = local.len();
    let points = if t == 0.0 {
        local.points().clone()
    } else {
        let cost = pairwise_cost(
            local.points().view(),
            shared.points().view(),
            None,
            None,
            0.0,
            GroundCost::Euclidean,
        )?;
        let sol = ot::solve_dense(cost.view(), local.masses(), shared.masses(), Method::Exact, 1e-9)?;
        let image = sol.plan.dot(shared.points());
        let mut out = local.points() * (1.0 - t);
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let a = local.masses()[i];
            if a > 0.0 {
                row.scaled_add(t / a, &image.row(i));
            } else {
                row.scaled_add(t, &local.point(i));
            }
        }
        out
    };
    Ok(InterpolatingMeasure {
        t,
        points,
        masses: vec![1.0 / n as f64; n],
        labels: local.labels().map(|l| l.to_vec()),
        owner: owner.to_string(),
        source_size: n,
    })
}

fn check_pair(a: &InterpolatingMeasure, b: &InterpolatingMeasure) -> Result<(), FedWadError> {
    if a.t != b.t {
        return Err(FedWadError::MismatchedT(a.t, b.t));
    }
    if a.dim() != b.dim() {
        return Err(FedWadError::DimensionMismatch(a.dim(), b.dim()));
    }
    if !(0.0..1.0).contains(&a.t) {
        return Err(FedWadError::InvalidT(a.t));
    }
    Ok(())
}

/// `W(eta_a, eta_b) / (1 - t)` with the feature-only cost.
pub fn approx_wasserstein_pair(
    eta_a: &InterpolatingMeasure,
    eta_b: &InterpolatingMeasure,
) -> Result<f64, FedWadError> {
    approx_wasserstein_pair_with(eta_a, eta_b, 0.0)
}

/// [`approx_wasserstein_pair`] with a class-aware cost.
pub fn approx_wasserstein_pair_with(
    eta_a: &InterpolatingMeasure,
    eta_b: &InterpolatingMeasure,
    label_penalty: f64,
) -> Result<f64, FedWadError> {
    check_pair(eta_a, eta_b)?;
    let cost = pairwise_cost(
        eta_a.points.view(),
        eta_b.points.view(),
        eta_a.labels.as_deref(),
        eta_b.labels.as_deref(),
        label_penalty,
        GroundCost::Euclidean,
    )?;
    let sol = ot::solve_dense(cost.view(), &eta_a.masses, &eta_b.masses, Method::Exact, 1e-9)?;
    Ok(sol.objective / (1.0 - eta_a.t))
}

/// Row-stacked per-seller cost blocks against one validation measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcatCostMatrix {
    pub blocks: Vec<Array2<f64>>,
    pub source_offsets: Vec<Range<usize>>,
    pub t: f64,
    pub label_penalty: f64,
}

impl ConcatCostMatrix {
    pub fn from_blocks(blocks: Vec<Array2<f64>>, t: f64, label_penalty: f64) -> Result<Self, FedWadError> {
        let cols = blocks.first().ok_or(FedWadError::NoSellers)?.ncols();
        if let Some(b) = blocks.iter().find(|b| b.ncols() != cols) {
            return Err(FedWadError::DimensionMismatch(cols, b.ncols()));
        }
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut start = 0;
        for b in &blocks {
            offsets.push(start..start + b.nrows());
            start += b.nrows();
        }
        Ok(Self {
            blocks,
            source_offsets: offsets,
            t,
            label_penalty,
        })
    }

    pub fn num_sources(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_rows(&self) -> usize {
        self.source_offsets.last().map_or(0, |r| r.end)
    }

    pub fn cols(&self) -> usize {
        self.blocks[0].ncols()
    }

    /// Dense stacked matrix `[C_1; ...; C_m]`.
    pub fn stacked(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.total_rows(), self.cols()));
        for (b, r) in self.blocks.iter().zip(&self.source_offsets) {
            out.slice_mut(ndarray::s![r.clone(), ..]).assign(b);
        }
        out
    }
}

/// Pairwise distances between every seller's interpolating measure and the
/// validation measure, one block per seller.
pub fn concat_cost(
    seller_etas: &[InterpolatingMeasure],
    eta_val: &InterpolatingMeasure,
    label_penalty: f64,
) -> Result<ConcatCostMatrix, FedWadError> {
    if seller_etas.is_empty() {
        return Err(FedWadError::NoSellers);
    }
    let blocks = seller_etas
        .iter()
        .map(|eta| {
            check_pair(eta, eta_val)?;
            Ok(pairwise_cost(
                eta.points.view(),
                eta_val.points.view(),
                eta.labels.as_deref(),
                eta_val.labels.as_deref(),
                label_penalty,
                GroundCost::Euclidean,
            )?)
        })
        .collect::<Result<Vec<_>, FedWadError>>()?;
    ConcatCostMatrix::from_blocks(blocks, eta_val.t, label_penalty)
}

/// Retain `indices[i]` rows of block `i`, in the given order.
pub fn subselect(cost: &ConcatCostMatrix, indices: &[Vec<usize>]) -> Result<ConcatCostMatrix, FedWadError> {
    if indices.len() != cost.num_sources() {
        return Err(FedWadError::SourceCount {
            expected: cost.num_sources(),
            got: indices.len(),
        });
    }
    let mut blocks = Vec::with_capacity(indices.len());
    for (s, (block, idx)) in cost.blocks.iter().zip(indices).enumerate() {
        let mut seen = vec![false; block.nrows()];
        for &i in idx {
            if i >= block.nrows() {
                return Err(FedWadError::IndexOutOfRange {
                    source_index: s,
                    index: i,
                    rows: block.nrows(),
                });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(FedWadError::DuplicateIndex { source_index: s, index: i });
            }
        }
        blocks.push(block.select(Axis(0), idx));
    }
    ConcatCostMatrix::from_blocks(blocks, cost.t, cost.label_penalty)
}

/// Pooled multi-source distance and its per-point / per-source valuations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombineWadResult {
    /// `min <C_pi, P> / (1 - t)`.
    pub value: f64,
    /// Calibrated gradients over the pooled rows, scaled by `1 / (1 - t)`.
    pub per_point_scores: CalibratedScores,
    /// Mean calibrated gradient of each source's rows; zero for empty sources.
    pub per_source_scores: Vec<f64>,
    pub source_offsets: Vec<Range<usize>>,
    /// Raw solution of the pooled problem (unscaled).
    pub solution: TransportSolution,
    pub t: f64,
}

impl CombineWadResult {
    /// Calibrated score of a point outside the pooled support whose cost row
    /// against the validation measure is `cost_row`: the c-transform of the
    /// target potentials minus the mean pooled potential.
    pub fn score_for_row(&self, cost_row: &[f64]) -> f64 {
        let f_tilde = cost_row
            .iter()
            .zip(&self.solution.dual_g)
            .map(|(c, g)| c - g)
            .fold(f64::INFINITY, f64::min);
        let f = &self.solution.dual_f;
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        (f_tilde - mean) / (1.0 - self.t)
    }
}

pub fn combine_wad(cost: &ConcatCostMatrix, t: f64) -> Result<CombineWadResult, FedWadError> {
    if !(0.0..1.0).contains(&t) {
        return Err(FedWadError::InvalidT(t));
    }
    let rows = cost.total_rows();
    if rows == 0 {
        return Err(FedWadError::EmptySelection);
    }
    let stacked = cost.stacked();
    let a = vec![1.0 / rows as f64; rows];
    let b = vec![1.0 / cost.cols() as f64; cost.cols()];
    let solution = ot::solve_dense(stacked.view(), &a, &b, Method::Exact, 1e-9)?;
    let scale = 1.0 / (1.0 - t);
    let per_point_scores = if rows >= 2 {
        let mut s = ot::calibrated_gradients(&solution)?;
        s.scores.iter_mut().for_each(|x| *x *= scale);
        s
    } else {
        CalibratedScores {
            scores: vec![0.0],
            source_side: true,
        }
    };
    let per_source_scores = cost
        .source_offsets
        .iter()
        .map(|r| {
            if r.is_empty() {
                0.0
            } else {
                per_point_scores.scores[r.clone()].iter().sum::<f64>() / r.len() as f64
            }
        })
        .collect();
    Ok(CombineWadResult {
        value: solution.objective * scale,
        per_point_scores,
        per_source_scores,
        source_offsets: cost.source_offsets.clone(),
        solution,
        t,
    })
}

/// `sum_i alpha_i W_hat(eta_i, eta_val)`.
pub fn agg_wad(
    seller_etas: &[InterpolatingMeasure],
    eta_val: &InterpolatingMeasure,
    alphas: &[f64],
    label_penalty: f64,
) -> Result<f64, FedWadError> {
    if seller_etas.is_empty() {
        return Err(FedWadError::NoSellers);
    }
    if alphas.len() != seller_etas.len() {
        return Err(FedWadError::OffSimplex(format!(
            "{} weights for {} sellers",
            alphas.len(),
            seller_etas.len()
        )));
    }
    let total: f64 = alphas.iter().sum();
    if alphas.iter().any(|&a| !(a >= -1e-6)) || (total - 1.0).abs() > 1e-6 {
        return Err(FedWadError::OffSimplex(format!("{alphas:?}")));
    }
    let mut acc = 0.0;
    for (eta, &alpha) in seller_etas.iter().zip(alphas) {
        if alpha == 0.0 {
            continue;
        }
        acc += alpha * approx_wasserstein_pair_with(eta, eta_val, label_penalty)?;
    }
    Ok(acc)
}

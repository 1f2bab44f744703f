use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::measure::euclidean;
use super::{DiscreteMeasure, OtError};

/// Ground cost between feature vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroundCost {
    /// `||x - y||_2`, the linear cost every downstream formula is stated against.
    #[default]
    Euclidean,
    /// `||x - y||_2^2`.
    SquaredEuclidean,
}

impl GroundCost {
    fn eval(self, d: f64) -> f64 {
        match self {
            GroundCost::Euclidean => d,
            GroundCost::SquaredEuclidean => d * d,
        }
    }
}

/// Pairwise cost `C_ij = ground(x_i, y_j) + penalty * [label_i != label_j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub values: Array2<f64>,
    pub label_penalty: f64,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>, label_penalty: f64) -> Result<Self, OtError> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(OtError::NonFinite("cost (must be finite and nonnegative)"));
        }
        Ok(Self {
            values,
            label_penalty,
        })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

pub fn build_cost(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    label_penalty: f64,
) -> Result<CostMatrix, OtError> {
    build_cost_with(mu, nu, label_penalty, GroundCost::Euclidean)
}

pub fn build_cost_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    label_penalty: f64,
    ground: GroundCost,
) -> Result<CostMatrix, OtError> {
    let values = pairwise_cost(
        mu.points().view(),
        nu.points().view(),
        mu.labels(),
        nu.labels(),
        label_penalty,
        ground,
    )?;
    Ok(CostMatrix {
        values,
        label_penalty,
    })
}

/// Cost between two raw point sets; labels are consulted only when
/// `label_penalty > 0`.
pub fn pairwise_cost(
    xs: ArrayView2<'_, f64>,
    ys: ArrayView2<'_, f64>,
    x_labels: Option<&[usize]>,
    y_labels: Option<&[usize]>,
    label_penalty: f64,
    ground: GroundCost,
) -> Result<Array2<f64>, OtError> {
    if xs.ncols() != ys.ncols() {
        return Err(OtError::DimensionMismatch {
            left: xs.ncols(),
            right: ys.ncols(),
        });
    }
    if !(label_penalty >= 0.0) {
        return Err(OtError::NegativePenalty(label_penalty));
    }
    let labels = if label_penalty > 0.0 {
        match (x_labels, y_labels) {
            (Some(l), Some(r)) => Some((l, r)),
            _ => return Err(OtError::MissingLabels(label_penalty)),
        }
    } else {
        None
    };
    let mut out = Array2::zeros((xs.nrows(), ys.nrows()));
    for (i, x) in xs.rows().into_iter().enumerate() {
        for (j, y) in ys.rows().into_iter().enumerate() {
            let mut c = ground.eval(euclidean(x, y));
            if let Some((l, r)) = labels {
                if l[i] != r[j] {
                    c += label_penalty;
                }
            }
            out[[i, j]] = c;
        }
    }
    Ok(out)
}

/// Twice the largest pairwise feature distance in the validation measure,
/// so that a label mismatch outweighs any feature proximity.
pub fn default_label_penalty(validation: &DiscreteMeasure) -> f64 {
    2.0 * validation.diameter()
}

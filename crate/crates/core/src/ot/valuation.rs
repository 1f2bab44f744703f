use serde::{Deserialize, Serialize};

use super::{OtError, SolveMethod, TransportSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Source,
    Target,
}

/// Per-point sensitivity of the Wasserstein distance to shifting probability
/// mass onto that point. Scores sum to zero; large positive scores mark points
/// that pull the measure away from the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedScores {
    pub scores: Vec<f64>,
    pub source_side: bool,
}

impl CalibratedScores {
    /// Build from raw potentials: `s_i = f_i - sum_{j != i} f_j / (m - 1)`.
    pub fn from_potentials(potentials: &[f64], source_side: bool) -> Result<Self, OtError> {
        let m = potentials.len();
        if m < 2 {
            return Err(OtError::TooFewPoints(m));
        }
        let total: f64 = potentials.iter().sum();
        let denom = (m - 1) as f64;
        let scores = potentials
            .iter()
            .map(|&f| f - (total - f) / denom)
            .collect();
        Ok(Self {
            scores,
            source_side,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.scores.iter().sum()
    }
}

/// Calibrated gradients of an exact solution with respect to source masses.
pub fn calibrated_gradients(sol: &TransportSolution) -> Result<CalibratedScores, OtError> {
    calibrated_gradients_with(sol, Side::Source, false)
}

pub fn calibrated_gradients_with(
    sol: &TransportSolution,
    side: Side,
    allow_entropic: bool,
) -> Result<CalibratedScores, OtError> {
    if sol.method == SolveMethod::Entropic && !allow_entropic {
        return Err(OtError::EntropicDuals);
    }
    match side {
        Side::Source => CalibratedScores::from_potentials(&sol.dual_f, true),
        Side::Target => CalibratedScores::from_potentials(&sol.dual_g, false),
    }
}

/// Indices of the `k` lowest scores (most valuable first); ties resolve to the
/// lower index.
pub fn select_top_k(scores: &CalibratedScores, k: usize) -> Result<Vec<usize>, OtError> {
    let m = scores.len();
    if k > m {
        return Err(OtError::KOutOfRange { k, m });
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| {
        scores.scores[a]
            .total_cmp(&scores.scores[b])
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn sol_with(f: Vec<f64>, method: SolveMethod) -> TransportSolution {
        TransportSolution {
            plan: Array2::zeros((f.len(), 1)),
            objective: 0.0,
            dual_g: vec![0.0],
            dual_f: f,
            method,
            duality_gap: 0.0,
        }
    }

    #[test]
    fn two_point_scores() {
        let s = calibrated_gradients(&sol_with(vec![3.0, 1.0], SolveMethod::Exact)).unwrap();
        assert_eq!(s.scores, vec![2.0, -2.0]);
        assert!(s.source_side);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            calibrated_gradients(&sol_with(vec![1.0], SolveMethod::Exact)),
            Err(OtError::TooFewPoints(1))
        ));
        let ent = sol_with(vec![1.0, 2.0], SolveMethod::Entropic);
        assert!(matches!(calibrated_gradients(&ent), Err(OtError::EntropicDuals)));
        assert!(calibrated_gradients_with(&ent, Side::Source, true).is_ok());
    }

    #[test]
    fn top_k() {
        let s = CalibratedScores {
            scores: vec![-1.0, 2.0, -3.0],
            source_side: true,
        };
        assert_eq!(select_top_k(&s, 2).unwrap(), vec![2, 0]);
        assert!(select_top_k(&s, 0).unwrap().is_empty());
        assert_eq!(select_top_k(&s, 3).unwrap(), vec![2, 0, 1]);
        assert!(select_top_k(&s, 4).is_err());
        let tied = CalibratedScores {
            scores: vec![1.0, 0.0, 1.0, 0.0],
            source_side: true,
        };
        assert_eq!(select_top_k(&tied, 4).unwrap(), vec![1, 3, 0, 2]);
    }

    proptest::proptest! {
        #[test]
        fn scores_sum_to_zero(f in proptest::collection::vec(-1e3f64..1e3, 2..40)) {
            let s = CalibratedScores::from_potentials(&f, true).unwrap();
            proptest::prop_assert!(s.sum().abs() < 1e-7);
        }
    }
}

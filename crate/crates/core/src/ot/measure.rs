use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::OtError;

/// Tolerance on the total mass of a probability vector.
pub const MASS_TOL: f64 = 1e-9;

/// A weighted, optionally labeled point cloud `sum_i a_i delta_{x_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    points: Array2<f64>,
    masses: Vec<f64>,
    labels: Option<Vec<usize>>,
}

impl DiscreteMeasure {
    pub fn new(
        points: Array2<f64>,
        masses: Vec<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, OtError> {
        let n = points.nrows();
        if n == 0 {
            return Err(OtError::EmptyMeasure);
        }
        if masses.len() != n {
            return Err(OtError::Shape(format!(
                "{} masses for {} points",
                masses.len(),
                n
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(OtError::Shape(format!("{} labels for {} points", l.len(), n)));
            }
        }
        check_mass_vector(&masses)?;
        if points.iter().any(|v| !v.is_finite()) {
            return Err(OtError::NonFinite("points"));
        }
        Ok(Self {
            points,
            masses,
            labels,
        })
    }

    /// Uniform masses `1/n`.
    pub fn uniform(points: Array2<f64>, labels: Option<Vec<usize>>) -> Result<Self, OtError> {
        let n = points.nrows();
        if n == 0 {
            return Err(OtError::EmptyMeasure);
        }
        Self::new(points, vec![1.0 / n as f64; n], labels)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of classes implied by the labels (`max + 1`), zero if unlabeled.
    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max().map(|m| m + 1))
            .unwrap_or(0)
    }

    pub fn with_labels(mut self, labels: Option<Vec<usize>>) -> Result<Self, OtError> {
        if let Some(l) = &labels {
            if l.len() != self.len() {
                return Err(OtError::Shape(format!(
                    "{} labels for {} points",
                    l.len(),
                    self.len()
                )));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Sub-measure on `indices` with uniform masses.
    pub fn select(&self, indices: &[usize]) -> Result<Self, OtError> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(OtError::Shape(format!(
                "index {bad} out of range for {} points",
                self.len()
            )));
        }
        let points = self.points.select(Axis(0), indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::uniform(points, labels)
    }

    /// Concatenate measures (row order preserved) with uniform masses.
    pub fn concat(parts: &[&DiscreteMeasure]) -> Result<Self, OtError> {
        let first = parts.first().ok_or(OtError::EmptyMeasure)?;
        let d = first.dim();
        if parts.iter().any(|p| p.dim() != d) {
            return Err(OtError::DimensionMismatch {
                left: d,
                right: parts.iter().map(|p| p.dim()).find(|&x| x != d).unwrap_or(d),
            });
        }
        let views: Vec<_> = parts.iter().map(|p| p.points.view()).collect();
        let points = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| OtError::Shape(e.to_string()))?;
        let labels = if parts.iter().all(|p| p.labels.is_some()) {
            Some(
                parts
                    .iter()
                    .flat_map(|p| p.labels.as_ref().unwrap().iter().copied())
                    .collect(),
            )
        } else {
            None
        };
        Self::uniform(points, labels)
    }

    /// Largest pairwise Euclidean distance among the points.
    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                best = best.max(euclidean(self.point(i), self.point(j)));
            }
        }
        best
    }
}

pub(crate) fn euclidean(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Nonnegative, finite, summing to one within [`MASS_TOL`].
pub fn check_mass_vector(masses: &[f64]) -> Result<(), OtError> {
    if masses.is_empty() {
        return Err(OtError::EmptyMeasure);
    }
    if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(OtError::InvalidMasses("negative or non-finite mass".into()));
    }
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(OtError::InvalidMasses(format!("masses sum to {total}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_bad_masses() {
        let p = array![[0.0], [1.0]];
        assert!(DiscreteMeasure::new(p.clone(), vec![0.5, 0.4], None).is_err());
        assert!(DiscreteMeasure::new(p.clone(), vec![1.5, -0.5], None).is_err());
        assert!(DiscreteMeasure::new(p.clone(), vec![1.0], None).is_err());
        assert!(DiscreteMeasure::new(p, vec![0.25, 0.75], Some(vec![0, 1])).is_ok());
        assert!(DiscreteMeasure::uniform(Array2::zeros((0, 2)), None).is_err());
    }

    #[test]
    fn select_and_concat() {
        let m = DiscreteMeasure::uniform(array![[0.0], [1.0], [2.0]], Some(vec![0, 1, 2])).unwrap();
        let s = m.select(&[2, 0]).unwrap();
        assert_eq!(s.points(), &array![[2.0], [0.0]]);
        assert_eq!(s.labels(), Some(&[2usize, 0][..]));
        assert_eq!(s.masses(), &[0.5, 0.5]);
        let c = DiscreteMeasure::concat(&[&m, &s]).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c.num_classes(), 3);
        assert!((m.diameter() - 2.0).abs() < 1e-15);
    }
}

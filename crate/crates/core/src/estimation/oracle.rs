use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::optimize::{DistanceEval, WassersteinOracle};
use super::EstimationError;
use crate::fedwad::{combine_wad, subselect, ConcatCostMatrix};
use crate::ot::{self, Method};
use crate::seed;

/// Split budget `n` across sources in proportion to `p` (largest remainder,
/// ties to the lower index), so the sizes always sum to `n`.
pub fn allocate(p: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = p.iter().map(|&x| x.max(0.0) * n as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Which distance the oracle reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMode {
    /// Pooled distance of all selected rows (CombineWad).
    Combined,
    /// `sum_i p_i W(S_i, val)` (AggWad).
    Aggregated,
}

/// Evaluates distances on prefixes of fixed per-source permutations of the
/// pilot rows, so `W(p, n)` is a deterministic function of the subset sizes.
#[derive(Debug, Clone)]
pub struct SubsetOracle {
    cost: ConcatCostMatrix,
    permutations: Vec<Vec<usize>>,
    t: f64,
    mode: DistanceMode,
    cache: HashMap<Vec<usize>, DistanceEval>,
}

impl SubsetOracle {
    pub fn new(cost: ConcatCostMatrix, t: f64, seed: u64, mode: DistanceMode) -> Self {
        let permutations = cost
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let mut idx: Vec<usize> = (0..b.nrows()).collect();
                idx.shuffle(&mut seed::rng(seed::derive_indexed(seed, "oracle-permutation", i as u64)));
                idx
            })
            .collect();
        Self {
            cost,
            permutations,
            t,
            mode,
            cache: HashMap::new(),
        }
    }

    pub fn cost(&self) -> &ConcatCostMatrix {
        &self.cost
    }

    /// Row indices of each source selected for ratio `p` at budget `n`.
    pub fn indices(&self, p: &[f64], n: usize) -> Result<Vec<Vec<usize>>, EstimationError> {
        if p.len() != self.cost.num_sources() {
            return Err(EstimationError::DimensionMismatch {
                expected: self.cost.num_sources(),
                got: p.len(),
            });
        }
        allocate(p, n)
            .into_iter()
            .zip(&self.permutations)
            .enumerate()
            .map(|(seller, (k, perm))| {
                if k > perm.len() {
                    Err(EstimationError::BudgetExceedsPilot {
                        seller,
                        requested: k,
                        available: perm.len(),
                    })
                } else {
                    Ok(perm[..k].to_vec())
                }
            })
            .collect()
    }

    fn pair_distance(&self, block: usize, rows: &[usize]) -> Result<f64, EstimationError> {
        let c = self.cost.blocks[block].select(ndarray::Axis(0), rows);
        let a = vec![1.0 / rows.len() as f64; rows.len()];
        let b = vec![1.0 / c.ncols() as f64; c.ncols()];
        let sol = ot::solve_dense(c.view(), &a, &b, Method::Exact, 1e-9)?;
        Ok(sol.objective / (1.0 - self.t))
    }

    fn compute(&self, p: &[f64], indices: &[Vec<usize>]) -> Result<DistanceEval, EstimationError> {
        match self.mode {
            DistanceMode::Combined => {
                let cw = combine_wad(&subselect(&self.cost, indices)?, self.t)?;
                // raising p_s pulls in more of source s's pilot rows, not just
                // the selected ones: extrapolate the dual to the whole pilot
                // block and average
                let dw_dp = self
                    .cost
                    .blocks
                    .iter()
                    .map(|block| {
                        let total: f64 = block
                            .rows()
                            .into_iter()
                            .map(|r| cw.score_for_row(r.as_slice().expect("standard layout")))
                            .sum();
                        total / block.nrows() as f64
                    })
                    .collect();
                Ok(DistanceEval { w: cw.value, dw_dp })
            }
            DistanceMode::Aggregated => {
                let mut w = 0.0;
                let mut dw_dp = Vec::with_capacity(indices.len());
                for (s, idx) in indices.iter().enumerate() {
                    let d = if idx.is_empty() {
                        self.pair_distance(s, &self.permutations[s])?
                    } else {
                        self.pair_distance(s, idx)?
                    };
                    w += p[s] * d;
                    dw_dp.push(d);
                }
                Ok(DistanceEval { w, dw_dp })
            }
        }
    }
}

impl WassersteinOracle for SubsetOracle {
    fn evaluate(&mut self, p: &[f64], n: usize) -> Result<DistanceEval, EstimationError> {
        let indices = self.indices(p, n)?;
        let mut key: Vec<usize> = indices.iter().map(Vec::len).collect();
        key.push(n);
        if self.mode == DistanceMode::Combined {
            if let Some(hit) = self.cache.get(&key) {
                return Ok(hit.clone());
            }
        }
        let out = self.compute(p, &indices)?;
        if self.mode == DistanceMode::Combined {
            self.cache.insert(key, out.clone());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_sums_to_budget() {
        assert_eq!(allocate(&[1.0 / 3.0; 3], 10), vec![4, 3, 3]);
        assert_eq!(allocate(&[0.08, 0.06, 0.86], 100), vec![8, 6, 86]);
        assert_eq!(allocate(&[1.0, 0.0], 7), vec![7, 0]);
        assert_eq!(allocate(&[0.5, 0.5], 0), vec![0, 0]);
    }
}

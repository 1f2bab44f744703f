//! Independent oracles shared by integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;

/// Minimum transport cost by exhaustive search over integral plans.
///
/// With integer row sums `rows` and column sums `cols` (common denominator
/// `sum(rows)`), every vertex of the transportation polytope is integral, so
/// the minimum over all integral plans equals the LP optimum. Returns the cost
/// in units of probability mass.
pub fn integral_plan_minimum(cost: &Array2<f64>, rows: &[u32], cols: &[u32]) -> f64 {
    let total: u32 = rows.iter().sum();
    assert_eq!(total, cols.iter().sum::<u32>());
    let mut memo: HashMap<(usize, Vec<u32>), f64> = HashMap::new();
    let best = row_search(cost, rows, 0, cols.to_vec(), &mut memo);
    best / f64::from(total)
}

fn row_search(
    cost: &Array2<f64>,
    rows: &[u32],
    i: usize,
    remaining: Vec<u32>,
    memo: &mut HashMap<(usize, Vec<u32>), f64>,
) -> f64 {
    if i == rows.len() {
        return if remaining.iter().all(|&r| r == 0) { 0.0 } else { f64::INFINITY };
    }
    if let Some(&v) = memo.get(&(i, remaining.clone())) {
        return v;
    }
    let mut best = f64::INFINITY;
    let mut row = vec![0u32; remaining.len()];
    fill_row(cost, rows, i, &remaining, 0, rows[i], &mut row, memo, &mut best);
    memo.insert((i, remaining), best);
    best
}

#[allow(clippy::too_many_arguments)]
fn fill_row(
    cost: &Array2<f64>,
    rows: &[u32],
    i: usize,
    remaining: &[u32],
    j: usize,
    left: u32,
    row: &mut Vec<u32>,
    memo: &mut HashMap<(usize, Vec<u32>), f64>,
    best: &mut f64,
) {
    if j == remaining.len() {
        if left != 0 {
            return;
        }
        let here: f64 = row
            .iter()
            .enumerate()
            .map(|(k, &x)| f64::from(x) * cost[[i, k]])
            .sum();
        let next: Vec<u32> = remaining.iter().zip(row.iter()).map(|(r, x)| r - x).collect();
        let rest = row_search(cost, rows, i + 1, next, memo);
        if here + rest < *best {
            *best = here + rest;
        }
        return;
    }
    for x in 0..=left.min(remaining[j]) {
        row[j] = x;
        fill_row(cost, rows, i, remaining, j + 1, left - x, row, memo, best);
    }
    row[j] = 0;
}

/// Random composition of `total` into `parts` nonnegative integers.
pub fn random_composition<R: Rng>(rng: &mut R, total: u32, parts: usize, positive: bool) -> Vec<u32> {
    loop {
        let mut out = vec![0u32; parts];
        for _ in 0..total {
            out[rng.random_range(0..parts)] += 1;
        }
        if !positive || out.iter().all(|&x| x > 0) {
            return out;
        }
    }
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize, d: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-scale..scale))
}

pub fn gaussian_points<R: Rng>(rng: &mut R, n: usize, d: usize, mean: f64, std: f64) -> Array2<f64> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(mean, std).unwrap();
    Array2::from_shape_fn((n, d), |_| normal.sample(rng))
}

/// Random probability vector with no tiny entries.
pub fn random_masses<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FlError;
use crate::ot::DiscreteMeasure;
use crate::seed;

/// Gaussian blobs, one per class. The class means depend only on
/// `means_seed`, so training and validation sets drawn with different sample
/// seeds describe the same task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub d: usize,
    pub class_sep: f64,
    /// Per-coordinate noise around each mean.
    pub noise: f64,
    pub means_seed: u64,
}

impl SyntheticSpec {
    /// Class means, rescaled so the closest pair is exactly `class_sep` apart.
    pub fn means(&self) -> Result<Array2<f64>, FlError> {
        if self.num_classes < 2 || self.d == 0 {
            return Err(FlError::InvalidSpec(format!(
                "need >= 2 classes and d >= 1, got {} and {}",
                self.num_classes, self.d
            )));
        }
        let mut rng = seed::rng(seed::derive(self.means_seed, "class-means"));
        let mut means: Array2<f64> = Array2::from_shape_fn((self.num_classes, self.d), |_| StandardNormal.sample(&mut rng));
        let mut closest = f64::INFINITY;
        for i in 0..self.num_classes {
            for j in 0..i {
                let diff = &means.row(i) - &means.row(j);
                closest = closest.min(diff.dot(&diff).sqrt());
            }
        }
        if closest > 0.0 {
            means *= self.class_sep / closest;
        }
        Ok(means)
    }

    /// `n` points with balanced labels (`i mod C`).
    pub fn sample(&self, n: usize, sample_seed: u64) -> Result<DiscreteMeasure, FlError> {
        if n < self.num_classes {
            return Err(FlError::InvalidSpec(format!(
                "n = {n} is smaller than the {} classes",
                self.num_classes
            )));
        }
        let means = self.means()?;
        let mut rng = seed::rng(sample_seed);
        let labels: Vec<usize> = (0..n).map(|i| i % self.num_classes).collect();
        let mut points = Array2::zeros((n, self.d));
        for (mut row, &y) in points.axis_iter_mut(Axis(0)).zip(&labels) {
            for (v, m) in row.iter_mut().zip(means.row(y)) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = m + self.noise * z;
            }
        }
        Ok(DiscreteMeasure::uniform(points, Some(labels))?)
    }
}

pub fn generate_synthetic(
    num_classes: usize,
    d: usize,
    n: usize,
    class_sep: f64,
    seed: u64,
) -> Result<DiscreteMeasure, FlError> {
    SyntheticSpec {
        num_classes,
        d,
        class_sep,
        noise: 1.0,
        means_seed: seed,
    }
    .sample(n, seed::derive(seed, "synthetic-points"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum PartitionScheme {
    Iid,
    /// Source `i` holds only the classes in `labels_per_source[i]`; a class
    /// listed for several sources is split evenly between them.
    LabelSkew { labels_per_source: Vec<Vec<usize>> },
    /// Class-stratified random split (every source starts with the same
    /// label distribution), then exactly `round(fraction_i * n_i)` labels of
    /// source `i` are flipped to a uniformly chosen different class.
    Mislabel { fractions: Vec<f64> },
    /// Every source is as large as the class pools allow while the major
    /// classes make up `major_proportion` of it, the rest spread uniformly.
    Imbalance {
        major_classes: BTreeSet<usize>,
        major_proportion: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    #[serde(flatten)]
    pub scheme: PartitionScheme,
    pub seed: u64,
}

fn subset(data: &DiscreteMeasure, idx: &[usize], labels: &[usize]) -> Result<DiscreteMeasure, FlError> {
    let points = data.points().select(Axis(0), idx);
    let labels = idx.iter().map(|&i| labels[i]).collect();
    Ok(DiscreteMeasure::uniform(points, Some(labels))?)
}

/// Split `len` shuffled indices into `m` contiguous near-equal chunks.
fn equal_chunks(order: &[usize], m: usize) -> Vec<Vec<usize>> {
    let base = order.len() / m;
    let extra = order.len() % m;
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    for i in 0..m {
        let len = base + usize::from(i < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Deal each class round-robin across `m` sources so every source ends up
/// with the same label distribution (up to one row per class).
fn stratified_chunks(order: &[usize], labels: &[usize], num_classes: usize, m: usize) -> Vec<Vec<usize>> {
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); m];
    // start each class on a different source so remainders spread out
    let mut turn: Vec<usize> = (0..num_classes).collect();
    for &i in order {
        let c = labels[i];
        parts[turn[c] % m].push(i);
        turn[c] += 1;
    }
    parts
}

pub fn partition(data: &DiscreteMeasure, spec: &PartitionSpec, m: usize) -> Result<Vec<DiscreteMeasure>, FlError> {
    if m == 0 {
        return Err(FlError::InvalidSpec("need at least one source".into()));
    }
    let labels = data.labels().ok_or(FlError::Unlabeled)?;
    let num_classes = data.num_classes();
    let mut rng = seed::rng(seed::derive(spec.seed, "partition"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);

    match &spec.scheme {
        PartitionScheme::Iid => equal_chunks(&order, m)
            .iter()
            .map(|idx| subset(data, idx, labels))
            .collect(),
        PartitionScheme::LabelSkew { labels_per_source } => {
            if labels_per_source.len() != m {
                return Err(FlError::InvalidSpec(format!(
                    "{} label sets for {m} sources",
                    labels_per_source.len()
                )));
            }
            let present: BTreeSet<usize> = labels.iter().copied().collect();
            let mut owners: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
            for (s, set) in labels_per_source.iter().enumerate() {
                for &c in set {
                    if !present.contains(&c) {
                        return Err(FlError::AbsentLabel(c));
                    }
                    owners[c].push(s);
                }
            }
            let mut parts: Vec<Vec<usize>> = vec![Vec::new(); m];
            let mut turn = vec![0usize; num_classes];
            for &i in &order {
                let c = labels[i];
                if owners[c].is_empty() {
                    continue;
                }
                parts[owners[c][turn[c] % owners[c].len()]].push(i);
                turn[c] += 1;
            }
            parts.iter().map(|idx| subset(data, idx, labels)).collect()
        }
        PartitionScheme::Mislabel { fractions } => {
            if fractions.len() != m {
                return Err(FlError::InvalidSpec(format!("{} fractions for {m} sources", fractions.len())));
            }
            if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
                return Err(FlError::InvalidSpec(format!("mislabel fraction {f} outside [0, 1]")));
            }
            if num_classes < 2 {
                return Err(FlError::InvalidSpec("mislabeling needs at least two classes".into()));
            }
            let mut out = Vec::with_capacity(m);
            for (idx, &f) in stratified_chunks(&order, labels, num_classes, m).iter().zip(fractions) {
                let mut local: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let flips = (f * idx.len() as f64).round() as usize;
                let chosen = rand::seq::index::sample(&mut rng, idx.len(), flips);
                for k in chosen.iter() {
                    let others: Vec<usize> = (0..num_classes).filter(|&c| c != local[k]).collect();
                    local[k] = *others.choose(&mut rng).expect("at least two classes");
                }
                let points = data.points().select(Axis(0), idx);
                out.push(DiscreteMeasure::uniform(points, Some(local))?);
            }
            Ok(out)
        }
        PartitionScheme::Imbalance {
            major_classes,
            major_proportion,
        } => {
            if !(*major_proportion > 0.0 && *major_proportion < 1.0) {
                return Err(FlError::InvalidSpec(format!(
                    "major proportion {major_proportion} outside (0, 1)"
                )));
            }
            if let Some(&c) = major_classes.iter().find(|&&c| c >= num_classes) {
                return Err(FlError::AbsentLabel(c));
            }
            let minor: Vec<usize> = (0..num_classes).filter(|c| !major_classes.contains(c)).collect();
            if major_classes.is_empty() || minor.is_empty() {
                return Err(FlError::InvalidSpec("need both major and minor classes".into()));
            }
            let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
            for &i in &order {
                pools[labels[i]].push(i);
            }
            let share = |c: usize| {
                if major_classes.contains(&c) {
                    major_proportion / major_classes.len() as f64
                } else {
                    (1.0 - major_proportion) / minor.len() as f64
                }
            };
            // largest source size whose per-class demand fits every pool
            let size = (0..num_classes)
                .map(|c| (pools[c].len() as f64 / (m as f64 * share(c))).floor() as usize)
                .min()
                .unwrap_or(0);
            let counts = class_counts(size, major_classes, &minor, *major_proportion, num_classes);
            let mut cursor = vec![0usize; num_classes];
            let mut out = Vec::with_capacity(m);
            for _ in 0..m {
                let mut idx = Vec::with_capacity(size);
                for c in 0..num_classes {
                    idx.extend_from_slice(&pools[c][cursor[c]..cursor[c] + counts[c]]);
                    cursor[c] += counts[c];
                }
                idx.shuffle(&mut rng);
                out.push(subset(data, &idx, labels)?);
            }
            Ok(out)
        }
    }
}

/// Per-class counts for one imbalanced source of `size` points.
fn class_counts(
    size: usize,
    major: &BTreeSet<usize>,
    minor: &[usize],
    proportion: f64,
    num_classes: usize,
) -> Vec<usize> {
    let major_total = (proportion * size as f64).round() as usize;
    let mut counts = vec![0usize; num_classes];
    let spread = |total: usize, classes: &mut dyn Iterator<Item = usize>, len: usize, counts: &mut Vec<usize>| {
        for (k, c) in classes.enumerate() {
            counts[c] = total / len + usize::from(k < total % len);
        }
    };
    spread(major_total, &mut major.iter().copied(), major.len(), &mut counts);
    spread(size - major_total, &mut minor.iter().copied(), minor.len(), &mut counts);
    counts
}

/// Uniformly random index subset of size `k` (sorted), for trial sampling.
pub fn sample_indices<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, n, k.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

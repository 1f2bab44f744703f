use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FlError;
use crate::ot::DiscreteMeasure;
use crate::seed;

/// Layer sizes of a fully connected ReLU network; no hidden layers is
/// multinomial logistic regression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl Arch {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: Vec::new(),
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![hidden],
            num_classes,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden_dims);
        w.push(self.num_classes);
        w
    }

    /// `(fan_in, fan_out, offset)` per layer; each layer stores its weight
    /// matrix row-major as `[fan_out x fan_in]` followed by the bias.
    fn layers(&self) -> Vec<(usize, usize, usize)> {
        let w = self.widths();
        let mut off = 0;
        w.windows(2)
            .map(|p| {
                let l = (p[0], p[1], off);
                off += p[0] * p[1] + p[1];
                l
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|&(i, o, _)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Arch,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub loss: f64,
}

impl ModelParams {
    pub fn new(arch: Arch, weights: Vec<f64>) -> Result<Self, FlError> {
        if weights.len() != arch.num_params() {
            return Err(FlError::ArchMismatch(format!(
                "{} weights for an architecture with {} parameters",
                weights.len(),
                arch.num_params()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(FlError::NonFinite);
        }
        Ok(Self { arch, weights })
    }

    pub fn zeros(arch: Arch) -> Self {
        let n = arch.num_params();
        Self {
            arch,
            weights: vec![0.0; n],
        }
    }

    /// Uniform Glorot initialization, zero biases.
    pub fn init(arch: Arch, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut weights = vec![0.0; arch.num_params()];
        for (fan_in, fan_out, off) in arch.layers() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut weights[off..off + fan_in * fan_out] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Self { arch, weights }
    }

    pub fn check_data(&self, data: &DiscreteMeasure) -> Result<(), FlError> {
        if data.dim() != self.arch.input_dim {
            return Err(FlError::ArchMismatch(format!(
                "model expects {} features, data has {}",
                self.arch.input_dim,
                data.dim()
            )));
        }
        match data.labels() {
            None => Err(FlError::Unlabeled),
            Some(l) => match l.iter().find(|&&y| y >= self.arch.num_classes) {
                Some(&y) => Err(FlError::ArchMismatch(format!(
                    "label {y} outside {} classes",
                    self.arch.num_classes
                ))),
                None => Ok(()),
            },
        }
    }

    fn layer(&self, fan_in: usize, fan_out: usize, off: usize) -> (ArrayView2<'_, f64>, &[f64]) {
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.weights[off..off + fan_in * fan_out])
            .expect("layout checked at construction");
        (w, &self.weights[off + fan_in * fan_out..off + fan_in * fan_out + fan_out])
    }

    /// Pre-activations of every layer; the last entry holds the logits.
    fn forward(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let layers = self.arch.layers();
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(layers.len());
        for (l, &(fan_in, fan_out, off)) in layers.iter().enumerate() {
            let (w, b) = self.layer(fan_in, fan_out, off);
            let z = match l {
                0 => x.dot(&w.t()),
                _ => acts[l - 1].mapv(relu).dot(&w.t()),
            };
            let mut z = z;
            for mut row in z.axis_iter_mut(Axis(0)) {
                row.iter_mut().zip(b).for_each(|(v, bias)| *v += bias);
            }
            acts.push(z);
        }
        acts
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward(x).pop().expect("at least one layer")
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<'_, f64>, y: &[usize]) -> (f64, Vec<f64>) {
        let layers = self.arch.layers();
        let acts = self.forward(x);
        let batch = x.nrows() as f64;
        let mut delta = acts.last().expect("at least one layer").clone();
        let mut loss = 0.0;
        for (mut row, &label) in delta.axis_iter_mut(Axis(0)).zip(y) {
            let lse = log_sum_exp(row.iter().copied());
            loss += lse - row[label];
            row.mapv_inplace(|z| (z - lse).exp() / batch);
            row[label] -= 1.0 / batch;
        }
        let mut grad = vec![0.0; self.weights.len()];
        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out, off) = layers[l];
            let input = match l {
                0 => x.to_owned(),
                _ => acts[l - 1].mapv(relu),
            };
            let gw = delta.t().dot(&input);
            grad[off..off + fan_in * fan_out]
                .iter_mut()
                .zip(gw.iter())
                .for_each(|(g, v)| *g = *v);
            let gb = delta.sum_axis(Axis(0));
            grad[off + fan_in * fan_out..off + fan_in * fan_out + fan_out]
                .iter_mut()
                .zip(gb.iter())
                .for_each(|(g, v)| *g = *v);
            if l > 0 {
                let (w, _) = self.layer(fan_in, fan_out, off);
                let mut back = delta.dot(&w);
                back.zip_mut_with(&acts[l - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
        }
        (loss / batch, grad)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.logits(x).axis_iter(Axis(0)).map(|r| argmax(r.iter().copied())).collect()
    }
}

fn relu(z: f64) -> f64 {
    z.max(0.0)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// First index of the maximum.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Accuracy (argmax, ties to the lowest class) and mean cross-entropy.
pub fn evaluate(model: &ModelParams, val: &DiscreteMeasure) -> Result<EvalResult, FlError> {
    model.check_data(val)?;
    let labels = val.labels().expect("checked");
    let logits = model.logits(val.points().view());
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (row, &y) in logits.axis_iter(Axis(0)).zip(labels) {
        if argmax(row.iter().copied()) == y {
            correct += 1;
        }
        loss += log_sum_exp(row.iter().copied()) - row[y];
    }
    let n = labels.len() as f64;
    Ok(EvalResult {
        accuracy: correct as f64 / n,
        loss: loss / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn parameter_layout() {
        assert_eq!(Arch::logistic(3, 2).num_params(), 8);
        assert_eq!(Arch::mlp(3, 4, 2).num_params(), 3 * 4 + 4 + 4 * 2 + 2);
        assert!(ModelParams::new(Arch::logistic(3, 2), vec![0.0; 7]).is_err());
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let val = DiscreteMeasure::uniform(array![[1.0, 2.0], [0.0, -1.0], [3.0, 3.0]], Some(vec![0, 1, 2])).unwrap();
        let r = evaluate(&ModelParams::zeros(Arch::logistic(2, 3)), &val).unwrap();
        assert!((r.loss - 3f64.ln()).abs() < 1e-9);
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_predictor_and_oracle() {
        let val = DiscreteMeasure::uniform(array![[-1.0], [1.0], [-2.0], [2.0]], Some(vec![0, 1, 0, 1])).unwrap();
        // logits = [0, 0] + bias favouring class 1 always
        let constant = ModelParams::new(Arch::logistic(1, 2), vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(evaluate(&constant, &val).unwrap().accuracy, 0.5);
        let oracle = ModelParams::new(Arch::logistic(1, 2), vec![-1e3, 1e3, 0.0, 0.0]).unwrap();
        let r = evaluate(&oracle, &val).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.loss < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let arch = Arch::mlp(3, 5, 4);
        let model = ModelParams::init(arch, 3);
        let x = array![[0.3, -1.2, 0.8], [1.5, 0.1, -0.4], [-0.7, 0.9, 0.2]];
        let y = [0, 3, 2];
        let (_, grad) = model.loss_and_grad(x.view(), &y);
        let h = 1e-6;
        for k in 0..model.weights.len() {
            let mut plus = model.clone();
            plus.weights[k] += h;
            let mut minus = model.clone();
            minus.weights[k] -= h;
            let fd = (plus.loss_and_grad(x.view(), &y).0 - minus.loss_and_grad(x.view(), &y).0) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-6, "param {k}: {fd} vs {}", grad[k]);
        }
    }
}

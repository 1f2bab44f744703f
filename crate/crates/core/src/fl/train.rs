use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{evaluate, Arch, EvalResult, ModelParams};
use super::FlError;
use crate::ot::DiscreteMeasure;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum Algorithm {
    FedAvg,
    FedProx { mu: f64 },
    Scaffold,
    FedNova,
}

impl Algorithm {
    pub fn label(&self) -> String {
        match self {
            Algorithm::FedAvg => "fedavg".into(),
            Algorithm::FedProx { mu } => format!("fedprox({mu})"),
            Algorithm::Scaffold => "scaffold".into(),
            Algorithm::FedNova => "fednova".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl FedConfig {
    pub fn validate(&self) -> Result<(), FlError> {
        if self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(FlError::InvalidSpec("rounds, local_epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(FlError::InvalidSpec(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if let Algorithm::FedProx { mu } = self.algorithm {
            if !(mu >= 0.0) {
                return Err(FlError::InvalidSpec(format!("proximal strength {mu} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Seed of client `client`'s minibatch stream in `round`; independent of the
/// order in which clients execute.
pub fn client_seed(master: u64, round: usize, client: usize) -> u64 {
    seed::derive_indexed(seed::derive_indexed(master, "round", round as u64), "client", client as u64)
}

/// Server and client control variates for Scaffold.
#[derive(Debug, Clone, Copy)]
pub struct Controls<'a> {
    pub server: &'a [f64],
    pub client: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct LocalContext<'a> {
    pub round: usize,
    pub seed: u64,
    pub controls: Option<Controls<'a>>,
}

/// What a client reports besides its weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalAux {
    /// Number of local SGD steps taken (tau_i).
    pub steps: usize,
    /// Mean minibatch loss over the local run.
    pub mean_loss: f64,
    /// Updated client control variate (Scaffold).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_control: Option<Vec<f64>>,
    /// Change of the client control variate (Scaffold).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_delta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub model: ModelParams,
    pub aux: LocalAux,
    pub n_samples: usize,
}

/// Minibatch SGD on cross-entropy starting from `model`.
pub fn local_train(
    model: &ModelParams,
    data: &DiscreteMeasure,
    global_ref: &ModelParams,
    cfg: &FedConfig,
    ctx: &LocalContext<'_>,
) -> Result<(ModelParams, LocalAux), FlError> {
    model.check_data(data)?;
    if model.arch != global_ref.arch {
        return Err(FlError::ArchMismatch("local and global architectures differ".into()));
    }
    let labels = data.labels().expect("checked");
    let n = data.len();
    let mut theta = model.clone();
    let mut rng = seed::rng(ctx.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut steps = 0usize;
    let mut loss_sum = 0.0;
    let correction: Option<Vec<f64>> = match (cfg.algorithm, ctx.controls) {
        (Algorithm::Scaffold, Some(c)) => Some(c.server.iter().zip(c.client).map(|(s, ci)| s - ci).collect()),
        _ => None,
    };
    let mu = match cfg.algorithm {
        Algorithm::FedProx { mu } if mu > 0.0 => Some(mu),
        _ => None,
    };

    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let x = data.points().select(ndarray::Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, mut grad) = theta.loss_and_grad(x.view(), &y);
            if !loss.is_finite() {
                return Err(FlError::Diverged { round: ctx.round });
            }
            loss_sum += loss;
            if let Some(mu) = mu {
                for ((g, w), w0) in grad.iter_mut().zip(&theta.weights).zip(&global_ref.weights) {
                    *g += mu * (w - w0);
                }
            }
            if let Some(corr) = &correction {
                grad.iter_mut().zip(corr).for_each(|(g, c)| *g += c);
            }
            for (w, g) in theta.weights.iter_mut().zip(&grad) {
                *w -= cfg.lr * g;
            }
            steps += 1;
        }
    }
    if theta.weights.iter().any(|w| !w.is_finite()) {
        return Err(FlError::Diverged { round: ctx.round });
    }

    let mut aux = LocalAux {
        steps,
        mean_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
        ..LocalAux::default()
    };
    if let (Algorithm::Scaffold, Some(c)) = (cfg.algorithm, ctx.controls) {
        // option II of the original algorithm
        let scale = if steps > 0 && cfg.lr > 0.0 { 1.0 / (steps as f64 * cfg.lr) } else { 0.0 };
        let updated: Vec<f64> = (0..theta.weights.len())
            .map(|k| c.client[k] - c.server[k] + scale * (model.weights[k] - theta.weights[k]))
            .collect();
        aux.control_delta = Some(updated.iter().zip(c.client).map(|(u, ci)| u - ci).collect());
        aux.client_control = Some(updated);
    }
    Ok((theta, aux))
}

/// Server-side state carried between rounds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ServerState {
    /// Scaffold server control variate.
    pub control: Option<Vec<f64>>,
}

impl ServerState {
    pub fn new(algorithm: Algorithm, num_params: usize) -> Self {
        Self {
            control: matches!(algorithm, Algorithm::Scaffold).then(|| vec![0.0; num_params]),
        }
    }
}

/// `base + sum_i coef_i (x_i - base)`; exact when every `x_i == base`.
fn anchored_combination(base: &[f64], models: &[&[f64]], coefs: &[f64]) -> Vec<f64> {
    let mut out = base.to_vec();
    for (x, &c) in models.iter().zip(coefs) {
        for ((o, xi), b) in out.iter_mut().zip(x.iter()).zip(base) {
            *o += c * (xi - b);
        }
    }
    out
}

/// Combine one round of client updates into the next global model.
pub fn aggregate(
    global: &ModelParams,
    updates: &[ClientUpdate],
    algorithm: Algorithm,
    state: &mut ServerState,
) -> Result<ModelParams, FlError> {
    let first = updates.first().ok_or(FlError::NoUpdates)?;
    if updates.iter().any(|u| u.model.arch != global.arch) {
        return Err(FlError::ArchMismatch("update architecture differs from the global model".into()));
    }
    let total: usize = updates.iter().map(|u| u.n_samples).sum();
    let weights: Vec<f64> = if total == 0 {
        vec![1.0 / updates.len() as f64; updates.len()]
    } else {
        updates.iter().map(|u| u.n_samples as f64 / total as f64).collect()
    };
    let models: Vec<&[f64]> = updates.iter().map(|u| u.model.weights.as_slice()).collect();
    let base = first.model.weights.as_slice();

    let weights_out = match algorithm {
        Algorithm::FedAvg | Algorithm::FedProx { .. } => anchored_combination(base, &models, &weights),
        Algorithm::Scaffold => {
            let uniform = vec![1.0 / updates.len() as f64; updates.len()];
            let next = anchored_combination(base, &models, &uniform);
            let control = state.control.get_or_insert_with(|| vec![0.0; global.weights.len()]);
            for u in updates {
                if let Some(delta) = &u.aux.control_delta {
                    for (c, d) in control.iter_mut().zip(delta) {
                        *c += d / updates.len() as f64;
                    }
                }
            }
            next
        }
        Algorithm::FedNova => {
            // x - tau_eff * sum_i w_i (x - y_i) / tau_i, written around y_0 so
            // that identical updates reproduce y_0 exactly
            let taus: Vec<f64> = updates.iter().map(|u| u.aux.steps.max(1) as f64).collect();
            let tau_eff: f64 = weights.iter().zip(&taus).map(|(w, t)| w * t).sum();
            let equal_taus = taus.iter().all(|&t| t == taus[0]);
            let coefs: Vec<f64> = if equal_taus {
                weights.clone()
            } else {
                weights.iter().zip(&taus).map(|(w, t)| tau_eff * w / t).collect()
            };
            let mut out = anchored_combination(base, &models, &coefs);
            if !equal_taus {
                let rest = 1.0 - coefs.iter().sum::<f64>();
                for ((o, g), b) in out.iter_mut().zip(&global.weights).zip(base) {
                    *o += rest * (g - b);
                }
            }
            out
        }
    };
    ModelParams::new(global.arch.clone(), weights_out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedOutcome {
    pub model: ModelParams,
    /// Validation metrics after every round.
    pub trajectory: Vec<EvalResult>,
    /// Loss of the global model on the pooled training data after every round.
    pub train_loss: Vec<f64>,
}

impl FedOutcome {
    pub fn final_eval(&self) -> EvalResult {
        *self.trajectory.last().expect("at least one round")
    }
}

fn pooled_train_loss(model: &ModelParams, sources: &[&DiscreteMeasure]) -> Result<f64, FlError> {
    let total: usize = sources.iter().map(|s| s.len()).sum();
    let mut acc = 0.0;
    for s in sources {
        acc += evaluate(model, s)?.loss * s.len() as f64;
    }
    Ok(acc / total.max(1) as f64)
}

/// Full-participation federated training; empty sources sit out.
pub fn fed_train(
    sources: &[DiscreteMeasure],
    val: &DiscreteMeasure,
    cfg: &FedConfig,
    arch: &Arch,
) -> Result<FedOutcome, FlError> {
    cfg.validate()?;
    let active: Vec<(usize, &DiscreteMeasure)> = sources.iter().enumerate().filter(|(_, s)| !s.is_empty()).collect();
    if active.is_empty() {
        return Err(FlError::NoSources);
    }
    let mut global = ModelParams::init(arch.clone(), seed::derive(cfg.seed, "model-init"));
    let mut state = ServerState::new(cfg.algorithm, global.weights.len());
    let mut client_controls: Vec<Vec<f64>> = vec![vec![0.0; global.weights.len()]; sources.len()];
    let pool: Vec<&DiscreteMeasure> = active.iter().map(|(_, s)| *s).collect();
    let mut trajectory = Vec::with_capacity(cfg.rounds);
    let mut train_loss = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        let server_control = state.control.clone();
        let updates: Vec<ClientUpdate> = active
            .par_iter()
            .map(|&(client, data)| {
                let controls = server_control.as_deref().map(|server| Controls {
                    server,
                    client: &client_controls[client],
                });
                let ctx = LocalContext {
                    round,
                    seed: client_seed(cfg.seed, round, client),
                    controls,
                };
                let (model, aux) = local_train(&global, data, &global, cfg, &ctx)?;
                Ok(ClientUpdate {
                    model,
                    aux,
                    n_samples: data.len(),
                })
            })
            .collect::<Result<_, FlError>>()?;
        for (&(client, _), u) in active.iter().zip(&updates) {
            if let Some(c) = &u.aux.client_control {
                client_controls[client].clone_from(c);
            }
        }
        global = aggregate(&global, &updates, cfg.algorithm, &mut state)?;
        trajectory.push(evaluate(&global, val)?);
        train_loss.push(pooled_train_loss(&global, &pool)?);
    }
    Ok(FedOutcome {
        model: global,
        trajectory,
        train_loss,
    })
}

/// Plain SGD on one dataset with the same initialization and minibatch
/// streams as client 0 of [`fed_train`].
pub fn centralized_train(
    data: &DiscreteMeasure,
    val: &DiscreteMeasure,
    cfg: &FedConfig,
    arch: &Arch,
) -> Result<FedOutcome, FlError> {
    cfg.validate()?;
    let mut model = ModelParams::init(arch.clone(), seed::derive(cfg.seed, "model-init"));
    let mut trajectory = Vec::with_capacity(cfg.rounds);
    let mut train_loss = Vec::with_capacity(cfg.rounds);
    let plain = FedConfig {
        algorithm: Algorithm::FedAvg,
        ..cfg.clone()
    };
    for round in 0..cfg.rounds {
        let ctx = LocalContext {
            round,
            seed: client_seed(cfg.seed, round, 0),
            controls: None,
        };
        model = local_train(&model, data, &model, &plain, &ctx)?.0;
        trajectory.push(evaluate(&model, val)?);
        train_loss.push(evaluate(&model, data)?.loss);
    }
    Ok(FedOutcome {
        model,
        trajectory,
        train_loss,
    })
}

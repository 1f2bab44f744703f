use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use wadmarket_core::estimation::{allocate, on_simplex};
use wadmarket_core::fedwad::{barycentric_interpolate, PrivacyPolicy};
use wadmarket_core::fl::{client_seed, evaluate, local_train, Arch, Controls, FedConfig, LocalContext, ModelParams};
use wadmarket_core::ot::DiscreteMeasure;
use wadmarket_core::seed;

use crate::codec::{decode, encode, Envelope, Message, UpdateAux};
use crate::MarketError;

pub const PLATFORM_ID: &str = "platform";
pub const BUYER_ID: &str = "buyer";
/// Runs whose id starts with this sample from full data instead of pilots.
pub const FORMAL_PREFIX: &str = "formal";

/// Settings every party agrees on when the session is set up.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyParams {
    pub session_id: String,
    pub seed: u64,
    pub num_sellers: usize,
    pub t: f64,
    pub policy: PrivacyPolicy,
    pub fed: FedConfig,
    pub arch: Arch,
}

pub trait Party: Send {
    fn id(&self) -> &str;
    fn handle(&mut self, env: &Envelope) -> Result<Option<Message>, MarketError>;
}

fn rows(points: &Array2<f64>) -> Vec<Vec<f64>> {
    points.outer_iter().map(|r| r.to_vec()).collect()
}

fn shared_from_wire(points: &[Vec<f64>], d: usize) -> Result<DiscreteMeasure, MarketError> {
    if points.iter().any(|r| r.len() != d) {
        return Err(MarketError::Protocol("shared measure rows do not match d".into()));
    }
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let arr = Array2::from_shape_vec((points.len(), d), flat).map_err(|e| MarketError::Protocol(e.to_string()))?;
    Ok(DiscreteMeasure::uniform(arr, None)?)
}

fn unexpected(party: &str, msg: &Message) -> MarketError {
    MarketError::Unexpected {
        party: party.to_string(),
        tag: msg.tag().to_string(),
    }
}

/// A seller's private holdings: pilot rows for trials, full data for formal
/// training.
#[derive(Debug, Clone)]
pub struct SellerData {
    pub pilot: DiscreteMeasure,
    pub full: DiscreteMeasure,
}

#[derive(Debug, Default)]
struct SellerRun {
    data: Option<DiscreteMeasure>,
    config: Option<FedConfig>,
    control: Option<Vec<f64>>,
}

pub struct Seller {
    id: String,
    index: usize,
    data: SellerData,
    params: Arc<PartyParams>,
    pilot_order: Vec<usize>,
    full_order: Vec<usize>,
    runs: HashMap<String, SellerRun>,
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    idx
}

impl Seller {
    pub fn new(index: usize, data: SellerData, params: Arc<PartyParams>) -> Self {
        // the pilot order matches the platform's subset oracle, so selection
        // re-evaluates exactly the subsets the trials used
        let pilot_order = permutation(
            data.pilot.len(),
            seed::derive_indexed(params.seed, "oracle-permutation", index as u64),
        );
        let full_order = permutation(
            data.full.len(),
            seed::derive_indexed(params.seed, "formal-permutation", index as u64),
        );
        Self {
            id: crate::session::seller_id(index),
            index,
            data,
            params,
            pilot_order,
            full_order,
            runs: HashMap::new(),
        }
    }

    fn sample(&mut self, run_id: &str, p: &[f64], n: usize, config: Option<FedConfig>) -> Result<Message, MarketError> {
        if p.len() != self.params.num_sellers || !on_simplex(p, 1e-9) {
            return Err(MarketError::Protocol(format!("invalid mixing ratio {p:?}")));
        }
        let k = allocate(p, n)[self.index];
        let formal = run_id.starts_with(FORMAL_PREFIX);
        let (pool, order) = if formal {
            (&self.data.full, &self.full_order)
        } else {
            (&self.data.pilot, &self.pilot_order)
        };
        if k > pool.len() {
            let (seller, requested, available) = (self.id.clone(), k, pool.len());
            return Err(if formal {
                MarketError::InsufficientData { seller, requested, available }
            } else {
                MarketError::BudgetExceedsPilot { seller, requested, available }
            });
        }
        let indices = order[..k].to_vec();
        let data = if k > 0 { Some(pool.select(&indices)?) } else { None };
        self.runs.insert(
            run_id.to_string(),
            SellerRun {
                data,
                config,
                control: None,
            },
        );
        Ok(Message::SampleIndices {
            run_id: run_id.to_string(),
            party_id: self.id.clone(),
            indices,
        })
    }

    fn train(&mut self, run_id: &str, round: usize, weights: &[f64], control: Option<&[f64]>) -> Result<Message, MarketError> {
        let run = self
            .runs
            .get_mut(run_id)
            .ok_or_else(|| MarketError::Protocol(format!("{} has no run {run_id}", self.id)))?;
        let data = run
            .data
            .as_ref()
            .ok_or_else(|| MarketError::Protocol(format!("{} selected no rows for {run_id}", self.id)))?;
        let cfg = run.config.as_ref().unwrap_or(&self.params.fed);
        let global = ModelParams::new(self.params.arch.clone(), weights.to_vec())?;
        let zeros;
        let controls = match control {
            Some(server) => {
                zeros = vec![0.0; server.len()];
                Some(Controls {
                    server,
                    client: run.control.as_deref().unwrap_or(&zeros),
                })
            }
            None => None,
        };
        let ctx = LocalContext {
            round,
            seed: client_seed(cfg.seed, round, self.index),
            controls,
        };
        let (model, aux) = local_train(&global, data, &global, cfg, &ctx)?;
        if let Some(c) = aux.client_control {
            run.control = Some(c);
        }
        Ok(Message::LocalUpdate {
            run_id: run_id.to_string(),
            round,
            party_id: self.id.clone(),
            weights: model.weights,
            n_samples: data.len(),
            aux: UpdateAux {
                steps: aux.steps,
                mean_loss: aux.mean_loss,
                control_delta: aux.control_delta,
            },
        })
    }
}

impl Party for Seller {
    fn id(&self) -> &str {
        &self.id
    }

    fn handle(&mut self, env: &Envelope) -> Result<Option<Message>, MarketError> {
        match &env.msg {
            Message::SharedMeasureInit { d, points, .. } => {
                let shared = shared_from_wire(points, *d)?;
                let eta = barycentric_interpolate(&self.data.pilot, &shared, self.params.t, &self.id, &self.params.policy)?;
                Ok(Some(Message::InterpMeasure {
                    party_id: self.id.clone(),
                    t: eta.t,
                    points: rows(&eta.points),
                    labels: eta.labels,
                }))
            }
            Message::TrialRequest { run_id, p, n, config } => self.sample(run_id, p, *n, config.clone()).map(Some),
            Message::GlobalModel {
                run_id,
                round,
                weights,
                control,
            } => self.train(run_id, *round, weights, control.as_deref()).map(Some),
            other => Err(unexpected(&self.id, other)),
        }
    }
}

/// Holds the validation set and answers evaluation queries only.
pub struct Buyer {
    val: DiscreteMeasure,
    params: Arc<PartyParams>,
    models: HashMap<String, ModelParams>,
    records: Vec<Message>,
}

impl Buyer {
    pub fn new(val: DiscreteMeasure, params: Arc<PartyParams>) -> Self {
        Self {
            val,
            params,
            models: HashMap::new(),
            records: Vec::new(),
        }
    }
}

impl Party for Buyer {
    fn id(&self) -> &str {
        BUYER_ID
    }

    fn handle(&mut self, env: &Envelope) -> Result<Option<Message>, MarketError> {
        match &env.msg {
            Message::SharedMeasureInit { d, points, .. } => {
                let shared = shared_from_wire(points, *d)?;
                let eta = barycentric_interpolate(&self.val, &shared, self.params.t, BUYER_ID, &self.params.policy)?;
                Ok(Some(Message::InterpMeasure {
                    party_id: BUYER_ID.to_string(),
                    t: eta.t,
                    points: rows(&eta.points),
                    labels: eta.labels,
                }))
            }
            Message::GlobalModel { run_id, weights, .. } => {
                let model = ModelParams::new(self.params.arch.clone(), weights.clone())?;
                self.models.insert(run_id.clone(), model);
                Ok(None)
            }
            Message::EvalRequest { run_id } => {
                let model = self
                    .models
                    .get(run_id)
                    .ok_or_else(|| MarketError::Protocol(format!("no model received for {run_id}")))?;
                let r = evaluate(model, &self.val)?;
                Ok(Some(Message::EvalResult {
                    run_id: run_id.clone(),
                    accuracy: r.accuracy,
                    loss: r.loss,
                }))
            }
            Message::TrialRecord { .. } => {
                self.records.push(env.msg.clone());
                Ok(None)
            }
            other => Err(unexpected(BUYER_ID, other)),
        }
    }
}

/// Routes frames to the parties it hosts, checking the session id and each
/// sender's sequence numbers, and stamps replies with the party's own
/// counter.
pub struct PartyHost {
    session_id: String,
    parties: BTreeMap<String, Box<dyn Party>>,
    next_seq: HashMap<String, u64>,
    last_seen: HashMap<(String, String), u64>,
}

impl PartyHost {
    pub fn new(session_id: impl Into<String>, parties: Vec<Box<dyn Party>>) -> Self {
        Self {
            session_id: session_id.into(),
            parties: parties.into_iter().map(|p| (p.id().to_string(), p)).collect(),
            next_seq: HashMap::new(),
            last_seen: HashMap::new(),
        }
    }

    pub fn party_ids(&self) -> Vec<String> {
        self.parties.keys().cloned().collect()
    }

    /// Handle one incoming frame; returns the encoded reply, if any.
    pub fn handle_frame(&mut self, frame: &[u8]) -> Result<Option<Vec<u8>>, MarketError> {
        let env = decode(frame)?;
        if env.session_id != self.session_id {
            return Err(MarketError::Protocol(format!("frame for session {} reached {}", env.session_id, self.session_id)));
        }
        let party = self
            .parties
            .get_mut(&env.receiver)
            .ok_or_else(|| MarketError::UnknownParty(env.receiver.clone()))?;
        let key = (env.receiver.clone(), env.sender.clone());
        if let Some(&last) = self.last_seen.get(&key) {
            if env.seq <= last {
                return Err(MarketError::OutOfOrder {
                    sender: env.sender,
                    got: env.seq,
                    last,
                });
            }
        }
        self.last_seen.insert(key, env.seq);
        let Some(reply) = party.handle(&env)? else {
            return Ok(None);
        };
        let seq = self.next_seq.entry(env.receiver.clone()).or_insert(0);
        *seq += 1;
        Ok(Some(encode(&Envelope {
            session_id: self.session_id.clone(),
            seq: *seq,
            sender: env.receiver,
            receiver: env.sender,
            msg: reply,
        })))
    }
}

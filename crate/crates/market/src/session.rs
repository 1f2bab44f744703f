//! The platform's side of a session: setup, trial runs, selection and formal
//! training, all driven through a [`Transport`].

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use wadmarket_core::estimation::{
    self, append_record, budgets, fit, optimize_ratio, read_records, DistanceMode, EstimatorKind, FittedEstimator,
    StepSchedule, SubsetOracle, TrajectoryPoint, TrialRecord, WassersteinOracle, DEFAULT_RIDGE,
};
use wadmarket_core::fedwad::{
    combine_wad, concat_cost, sample_shared_measure, subselect, ConcatCostMatrix, InterpolatingMeasure,
    PrivacyPolicy, SharedMeasureSpec,
};
use wadmarket_core::fl::{
    aggregate, Arch, ClientUpdate, EvalResult, FedConfig, LocalAux, ModelParams, ServerState,
};
use wadmarket_core::ot::DiscreteMeasure;
use wadmarket_core::seed;

use crate::audit::AuditLog;
use crate::codec::{decode, encode, Envelope, Message};
use crate::party::{Buyer, Party, PartyHost, PartyParams, Seller, SellerData, BUYER_ID, FORMAL_PREFIX, PLATFORM_ID};
use crate::transport::{InProcess, Transport};
use crate::MarketError;

pub fn seller_id(index: usize) -> String {
    format!("seller-{index}")
}

/// Everything the parties agree on before a session starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub seed: u64,
    pub num_sellers: usize,
    pub shared: SharedMeasureSpec,
    pub t: f64,
    pub t_min: f64,
    pub label_penalty: f64,
    /// Local training used for trial runs.
    pub fed: FedConfig,
    pub arch: Arch,
}

impl SessionConfig {
    pub fn session_id(&self) -> String {
        format!("session-{:016x}", self.seed)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        if self.num_sellers == 0 {
            return Err(MarketError::Config("need at least one seller".into()));
        }
        self.shared.validate()?;
        self.policy().check(self.t)?;
        self.fed.validate()?;
        if self.shared.d != self.arch.input_dim {
            return Err(MarketError::Config(format!(
                "shared measure dimension {} differs from model input {}",
                self.shared.d, self.arch.input_dim
            )));
        }
        Ok(())
    }

    pub fn policy(&self) -> PrivacyPolicy {
        PrivacyPolicy {
            t_min: self.t_min,
            enforce: true,
        }
    }

    fn party_params(&self) -> PartyParams {
        PartyParams {
            session_id: self.session_id(),
            seed: self.seed,
            num_sellers: self.num_sellers,
            t: self.t,
            policy: self.policy(),
            fed: self.fed.clone(),
            arch: self.arch.clone(),
        }
    }

    /// The non-platform parties of a session, ready to serve frames.
    pub fn host(&self, sellers: Vec<SellerData>, val: DiscreteMeasure) -> Result<PartyHost, MarketError> {
        self.validate()?;
        if sellers.len() != self.num_sellers {
            return Err(MarketError::Config(format!(
                "configured for {} sellers, got {}",
                self.num_sellers,
                sellers.len()
            )));
        }
        let params = Arc::new(self.party_params());
        let mut parties: Vec<Box<dyn Party>> = sellers
            .into_iter()
            .enumerate()
            .map(|(i, d)| Box::new(Seller::new(i, d, params.clone())) as Box<dyn Party>)
            .collect();
        parties.push(Box::new(Buyer::new(val, params)));
        Ok(PartyHost::new(self.session_id(), parties))
    }
}

/// Which mixing ratios the trial phase visits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RatioSampler {
    /// The uniform point, then the one-hot corners, then Dirichlet(1, ..., 1)
    /// draws, truncated to the requested count.
    Standard,
    /// A fixed list, used as is at every budget.
    Fixed(Vec<Vec<f64>>),
}

impl RatioSampler {
    pub fn ratios(&self, m: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
        match self {
            RatioSampler::Fixed(list) => list.clone(),
            RatioSampler::Standard => {
                let mut out = vec![vec![1.0 / m as f64; m]];
                for i in 0..m {
                    let mut e = vec![0.0; m];
                    e[i] = 1.0;
                    out.push(e);
                }
                let mut rng = seed::rng(seed);
                while out.len() < count {
                    let g: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut rng)).collect();
                    let s: f64 = g.iter().sum();
                    out.push(g.into_iter().map(|x| x / s).collect());
                }
                out.truncate(count);
                out
            }
        }
    }
}

pub struct Session {
    cfg: SessionConfig,
    transport: Box<dyn Transport>,
    seq: u64,
    last_seen: HashMap<String, u64>,
    log: AuditLog,
    cost: Option<ConcatCostMatrix>,
    records: Vec<TrialRecord>,
    records_path: Option<PathBuf>,
    formal_runs: usize,
}

impl Session {
    pub fn new(cfg: SessionConfig, transport: Box<dyn Transport>) -> Result<Self, MarketError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            transport,
            seq: 0,
            last_seen: HashMap::new(),
            log: AuditLog::default(),
            cost: None,
            records: Vec::new(),
            records_path: None,
            formal_runs: 0,
        })
    }

    pub fn in_process(cfg: SessionConfig, sellers: Vec<SellerData>, val: DiscreteMeasure) -> Result<Self, MarketError> {
        let host = cfg.host(sellers, val)?;
        Self::new(cfg, Box::new(InProcess::new(host)))
    }

    /// Persist trial records to `path` as they complete; records already in
    /// the file are reused instead of rerun.
    pub fn with_records(mut self, path: &Path) -> Result<Self, MarketError> {
        self.records = read_records(path)?;
        self.records_path = Some(path.to_path_buf());
        Ok(self)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn log(&self) -> &AuditLog {
        &self.log
    }

    pub fn cost(&self) -> Option<&ConcatCostMatrix> {
        self.cost.as_ref()
    }

    /// Close the session and hand over its complete audit log.
    pub fn finish(mut self) -> AuditLog {
        self.log.complete = true;
        self.log
    }

    fn request(&mut self, to: &str, msg: Message) -> Result<Option<Message>, MarketError> {
        self.seq += 1;
        let frame = encode(&Envelope {
            session_id: self.cfg.session_id(),
            seq: self.seq,
            sender: PLATFORM_ID.to_string(),
            receiver: to.to_string(),
            msg,
        });
        self.log.push(PLATFORM_ID, to, &frame);
        let Some(reply) = self.transport.exchange(&frame)? else {
            return Ok(None);
        };
        let env = decode(&reply)?;
        if env.session_id != self.cfg.session_id() || env.sender != to || env.receiver != PLATFORM_ID {
            return Err(MarketError::Protocol(format!(
                "reply from {} to {} in session {} does not answer a message to {to}",
                env.sender, env.receiver, env.session_id
            )));
        }
        let last = self.last_seen.entry(env.sender.clone()).or_insert(0);
        if env.seq <= *last {
            return Err(MarketError::OutOfOrder {
                sender: env.sender,
                got: env.seq,
                last: *last,
            });
        }
        *last = env.seq;
        self.log.push(&env.sender, PLATFORM_ID, &reply);
        Ok(Some(env.msg))
    }

    fn reply(&mut self, to: &str, msg: Message) -> Result<Message, MarketError> {
        let tag = msg.tag();
        self.request(to, msg)?
            .ok_or_else(|| MarketError::Protocol(format!("{to} sent no reply to {tag}")))
    }

    /// Broadcast the shared measure and collect every party's interpolating
    /// measure. Idempotent.
    pub fn setup(&mut self) -> Result<&ConcatCostMatrix, MarketError> {
        if self.cost.is_none() {
            let spec = self.cfg.shared;
            let shared = sample_shared_measure(&spec)?;
            let init = Message::SharedMeasureInit {
                seed: spec.seed,
                k: spec.k,
                d: spec.d,
                mean: spec.mean,
                std: spec.std,
                points: shared.points().outer_iter().map(|r| r.to_vec()).collect(),
            };
            let mut etas = Vec::with_capacity(self.cfg.num_sellers);
            for i in 0..self.cfg.num_sellers {
                let reply = self.reply(&seller_id(i), init.clone())?;
                etas.push(self.interp_from(&seller_id(i), reply)?);
            }
            let reply = self.reply(BUYER_ID, init)?;
            let val = self.interp_from(BUYER_ID, reply)?;
            self.cost = Some(concat_cost(&etas, &val, self.cfg.label_penalty)?);
        }
        Ok(self.cost.as_ref().expect("set above"))
    }

    fn interp_from(&self, party: &str, msg: Message) -> Result<InterpolatingMeasure, MarketError> {
        let Message::InterpMeasure {
            party_id,
            t,
            points,
            labels,
        } = msg
        else {
            return Err(MarketError::Protocol(format!("{party} answered the shared measure with {}", msg.tag())));
        };
        if party_id != party {
            return Err(MarketError::Protocol(format!("{party} sent a measure labelled {party_id}")));
        }
        self.cfg.policy().check(t)?;
        if t != self.cfg.t {
            return Err(MarketError::Protocol(format!("{party} interpolated at t = {t}, session uses {}", self.cfg.t)));
        }
        let d = self.cfg.shared.d;
        if points.is_empty() || points.iter().any(|r| r.len() != d) {
            return Err(MarketError::Protocol(format!("{party} sent malformed points")));
        }
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((points.len(), d), flat).expect("shape checked");
        Ok(InterpolatingMeasure::from_parts(party_id, t, arr, labels)?)
    }

    /// Ask every seller for its share of `(p, n)`; returns the index sets.
    fn collect_indices(&mut self, run_id: &str, p: &[f64], n: usize, config: Option<FedConfig>) -> Result<Vec<Vec<usize>>, MarketError> {
        (0..self.cfg.num_sellers)
            .map(|i| {
                let msg = Message::TrialRequest {
                    run_id: run_id.to_string(),
                    p: p.to_vec(),
                    n,
                    config: config.clone(),
                };
                match self.reply(&seller_id(i), msg)? {
                    Message::SampleIndices { run_id: r, party_id, indices } if r == run_id && party_id == seller_id(i) => {
                        Ok(indices)
                    }
                    other => Err(MarketError::Protocol(format!("{} answered a trial request with {}", seller_id(i), other.tag()))),
                }
            })
            .collect()
    }

    /// Federated training over the sellers holding rows for `run_id`; the
    /// buyer evaluates the final model.
    fn federated_run(&mut self, run_id: &str, sizes: &[usize], cfg: &FedConfig) -> Result<(ModelParams, EvalResult), MarketError> {
        let active: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] > 0).collect();
        if active.is_empty() {
            return Err(MarketError::Protocol(format!("{run_id} selected no rows")));
        }
        let mut global = ModelParams::init(self.cfg.arch.clone(), seed::derive(cfg.seed, "model-init"));
        let mut state = ServerState::new(cfg.algorithm, global.weights.len());
        for round in 0..cfg.rounds {
            let mut updates = Vec::with_capacity(active.len());
            for &i in &active {
                let msg = Message::GlobalModel {
                    run_id: run_id.to_string(),
                    round,
                    weights: global.weights.clone(),
                    control: state.control.clone(),
                };
                match self.reply(&seller_id(i), msg)? {
                    Message::LocalUpdate {
                        weights,
                        n_samples,
                        aux,
                        round: r,
                        ..
                    } if r == round => updates.push(ClientUpdate {
                        model: ModelParams::new(self.cfg.arch.clone(), weights)?,
                        aux: LocalAux {
                            steps: aux.steps,
                            mean_loss: aux.mean_loss,
                            client_control: None,
                            control_delta: aux.control_delta,
                        },
                        n_samples,
                    }),
                    other => return Err(MarketError::Protocol(format!("{} answered a model with {}", seller_id(i), other.tag()))),
                }
            }
            global = aggregate(&global, &updates, cfg.algorithm, &mut state)?;
        }
        self.request(
            BUYER_ID,
            Message::GlobalModel {
                run_id: run_id.to_string(),
                round: cfg.rounds,
                weights: global.weights.clone(),
                control: None,
            },
        )?;
        match self.reply(BUYER_ID, Message::EvalRequest { run_id: run_id.to_string() })? {
            Message::EvalResult { accuracy, loss, .. } => Ok((global, EvalResult { accuracy, loss })),
            other => Err(MarketError::Protocol(format!("buyer answered an eval request with {}", other.tag()))),
        }
    }

    /// One trial: index-only sampling at the sellers, CombineWad on the
    /// platform, a federated trial training, and a persisted record.
    pub fn run_trial(&mut self, run_id: &str, p: &[f64], n: usize) -> Result<TrialRecord, MarketError> {
        self.setup()?;
        let indices = self.collect_indices(run_id, p, n, None)?;
        let cost = self.cost.as_ref().expect("setup done");
        let w = combine_wad(&subselect(cost, &indices)?, self.cfg.t)?.value;
        let sizes: Vec<usize> = indices.iter().map(Vec::len).collect();
        let fed = self.cfg.fed.clone();
        let (_, eval) = self.federated_run(run_id, &sizes, &fed)?;
        let record = TrialRecord {
            run_id: run_id.to_string(),
            p: p.to_vec(),
            n,
            w,
            v: eval.accuracy,
        };
        if let Some(path) = &self.records_path {
            append_record(path, &record)?;
        }
        self.request(
            BUYER_ID,
            Message::TrialRecord {
                run_id: record.run_id.clone(),
                p: record.p.clone(),
                n,
                w,
                v: record.v,
            },
        )?;
        self.records.push(record.clone());
        Ok(record)
    }
}

/// Trial runs at every budget. Records already present (from a resumed
/// session) are returned without rerunning.
pub fn run_trial_phase(
    session: &mut Session,
    b_s: usize,
    budget_list: &[usize],
    sampler: &RatioSampler,
) -> Result<Vec<TrialRecord>, MarketError> {
    session.setup()?;
    let m = session.cfg.num_sellers;
    let mut out = Vec::new();
    for (bi, &n) in budget_list.iter().enumerate() {
        let ratios = sampler.ratios(m, b_s, seed::derive_indexed(session.cfg.seed, "ratio-sampler", bi as u64));
        for (j, p) in ratios.iter().enumerate() {
            let run_id = format!("trial-n{n}-{j:03}");
            if let Some(done) = session.records.iter().find(|r| r.run_id == run_id) {
                out.push(done.clone());
                continue;
            }
            out.push(session.run_trial(&run_id, p, n)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub n: usize,
    pub kind: EstimatorKind,
    pub p0: Vec<f64>,
    pub steps: usize,
    pub schedule: StepSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub p_star: Vec<f64>,
    pub projected: f64,
    pub trajectory: Vec<TrajectoryPoint>,
    pub stopped_early: bool,
    pub estimators: (FittedEstimator, FittedEstimator),
}

/// Fit estimators at the smallest and largest trial budgets and ascend the
/// projected performance at `params.n`. No training happens here.
pub fn run_selection_phase(session: &mut Session, params: &SelectionParams) -> Result<SelectionOutcome, MarketError> {
    let found = budgets(&session.records);
    if found.len() < 2 {
        return Err(MarketError::NotEnoughBudgets(found));
    }
    let (n0, n1) = (found[0], *found.last().expect("two budgets"));
    let cost = session.setup()?.clone();
    let mode = if params.kind == EstimatorKind::Aggwad {
        DistanceMode::Aggregated
    } else {
        DistanceMode::Combined
    };
    let mut oracle = SubsetOracle::new(cost, session.cfg.t, session.cfg.seed, mode);
    let mut fit_at = |n: usize| -> Result<FittedEstimator, MarketError> {
        let mut recs = estimation::at_budget(&session.records, n);
        if mode == DistanceMode::Aggregated {
            // trial subsets are the oracle's prefixes, so this is the
            // aggregated distance of exactly the trial data
            for r in &mut recs {
                r.w = oracle.evaluate(&r.p, r.n)?.w;
            }
        }
        Ok(fit(&recs, params.kind, DEFAULT_RIDGE)?)
    };
    let (est_i, est_j) = (fit_at(n0)?, fit_at(n1)?);
    let out = optimize_ratio((&est_i, &est_j), params.n, &params.p0, params.steps, &params.schedule, &mut oracle)?;
    let last = out.final_point().clone();
    Ok(SelectionOutcome {
        p_star: last.p,
        projected: last.predicted,
        trajectory: out.trajectory,
        stopped_early: out.stopped_early,
        estimators: (est_i, est_j),
    })
}

/// Sellers draw `p_star`-proportional samples of size `n` from their full
/// data and train with `cfg`; the buyer only sees the final metrics.
pub fn run_formal_training(
    session: &mut Session,
    p_star: &[f64],
    n: usize,
    cfg: &FedConfig,
) -> Result<(ModelParams, EvalResult), MarketError> {
    cfg.validate()?;
    session.setup()?;
    let run_id = format!("{FORMAL_PREFIX}-{:03}", session.formal_runs);
    session.formal_runs += 1;
    let indices = session.collect_indices(&run_id, p_star, n, Some(cfg.clone()))?;
    let sizes: Vec<usize> = indices.iter().map(Vec::len).collect();
    session.federated_run(&run_id, &sizes, cfg)
}

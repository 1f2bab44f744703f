//! Scenario configuration, party data and the end-to-end pipeline.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wadmarket_core::estimation::{self, EstimatorKind, StepSchedule, TrialRecord};
use wadmarket_core::fedwad::{SharedMeasureSpec, DEFAULT_T, DEFAULT_T_MIN};
use wadmarket_core::fl::{
    io, partition, sample_indices, Algorithm, Arch, EvalResult, FedConfig, PartitionScheme, PartitionSpec,
    SyntheticSpec,
};
use wadmarket_core::ot::{default_label_penalty, DiscreteMeasure};
use wadmarket_core::seed;
use wadmarket_market::{
    run_formal_training, run_selection_phase, run_trial_phase, seller_id, AuditLog, RatioSampler, SelectionOutcome,
    SelectionParams, SellerData, Session, SessionConfig, TcpClient, BUYER_ID,
};

use crate::config::KvConfig;
use crate::report;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    /// Gaussian class blobs, partitioned across sellers.
    Synthetic {
        num_classes: usize,
        dim: usize,
        class_sep: f64,
        noise: f64,
        /// Rows in the pool that is partitioned across sellers.
        pool: usize,
    },
    /// Feature files (`.csv` or binary), one per seller plus validation.
    Files { sellers: Vec<PathBuf>, validation: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSource,
    pub validation_size: usize,
    /// Pilot rows per seller.
    pub pilot: usize,
    pub num_sellers: usize,
    pub partition: PartitionScheme,
    pub fed: FedConfig,
    pub arch: Arch,
    pub shared: SharedMeasureSpec,
    pub t: f64,
    pub t_min: f64,
    /// `None` picks twice the validation diameter.
    pub label_penalty: Option<f64>,
    /// Trials per budget (`B_s`).
    pub trials: usize,
    pub n0: usize,
    pub n1: usize,
    pub formal_n: usize,
    pub estimator: EstimatorKind,
    pub p0: Vec<f64>,
    pub steps: usize,
    pub schedule: StepSchedule,
}

fn parse_algorithm(kv: &KvConfig) -> Result<Algorithm, CliError> {
    let name: String = kv.get_or("fed.algorithm", "fedavg".to_string())?;
    let mu: f64 = kv.get_or("fed.mu", 0.1)?;
    Ok(match name.as_str() {
        "fedavg" => Algorithm::FedAvg,
        "fedprox" => Algorithm::FedProx { mu },
        "scaffold" => Algorithm::Scaffold,
        "fednova" => Algorithm::FedNova,
        other => return Err(CliError::Invalid(format!("fed.algorithm: unknown algorithm `{other}`"))),
    })
}

fn parse_partition(kv: &KvConfig, m: usize) -> Result<PartitionScheme, CliError> {
    let scheme: String = kv.get_or("partition.scheme", "iid".to_string())?;
    Ok(match scheme.as_str() {
        "iid" => PartitionScheme::Iid,
        "label_skew" => PartitionScheme::LabelSkew {
            labels_per_source: kv
                .groups("partition.labels")?
                .ok_or_else(|| CliError::Invalid("partition.labels is required for label_skew".into()))?,
        },
        "mislabel" => PartitionScheme::Mislabel {
            fractions: kv.list("partition.fractions")?.unwrap_or_else(|| vec![0.0; m]),
        },
        "imbalance" => PartitionScheme::Imbalance {
            major_classes: kv.list::<usize>("partition.major_classes")?.unwrap_or_default().into_iter().collect::<BTreeSet<_>>(),
            major_proportion: kv.get_or("partition.major_proportion", 0.8)?,
        },
        other => return Err(CliError::Invalid(format!("partition.scheme: unknown scheme `{other}`"))),
    })
}

impl ScenarioConfig {
    /// Build from a parsed config; relative paths resolve against `base`.
    pub fn from_kv(kv: &KvConfig, base: Option<&Path>) -> Result<Self, CliError> {
        let name = kv.get_or("name", "scenario".to_string())?;
        let seed = kv.get_or("seed", 0u64)?;
        let out = kv.path("out", base)?.unwrap_or_else(|| PathBuf::from("out").join(&name));
        let num_sellers = kv.get_or("partition.sellers", 3usize)?;
        let source: String = kv.get_or("data.source", "synthetic".to_string())?;
        let data = match source.as_str() {
            "synthetic" => DataSource::Synthetic {
                num_classes: kv.get_or("data.classes", 6)?,
                dim: kv.get_or("data.dim", 5)?,
                class_sep: kv.get_or("data.class_sep", 3.0)?,
                noise: kv.get_or("data.noise", 1.0)?,
                pool: kv.get_or("data.pool", 3000)?,
            },
            "files" => {
                let files: Vec<String> = kv
                    .list("data.seller_files")?
                    .ok_or_else(|| CliError::Invalid("data.seller_files is required for file data".into()))?;
                let resolve = |f: &str| match base {
                    Some(b) if Path::new(f).is_relative() => b.join(f),
                    _ => PathBuf::from(f),
                };
                DataSource::Files {
                    sellers: files.iter().map(|f| resolve(f)).collect(),
                    validation: kv
                        .path("data.validation_file", base)?
                        .ok_or_else(|| CliError::Invalid("data.validation_file is required for file data".into()))?,
                }
            }
            other => return Err(CliError::Invalid(format!("data.source: unknown source `{other}`"))),
        };
        let (dim, classes) = match &data {
            DataSource::Synthetic { dim, num_classes, .. } => (*dim, *num_classes),
            DataSource::Files { .. } => (kv.require("data.dim")?, kv.require("data.classes")?),
        };
        let validation_size = kv.get_or("data.validation", 300)?;
        let pilot = kv.get_or("data.pilot", 200)?;
        let fed = FedConfig {
            algorithm: parse_algorithm(kv)?,
            rounds: kv.get_or("fed.rounds", 30)?,
            local_epochs: kv.get_or("fed.local_epochs", 1)?,
            lr: kv.get_or("fed.lr", 0.1)?,
            batch_size: kv.get_or("fed.batch_size", 32)?,
            seed: seed::derive(seed, "fl"),
        };
        let arch = match kv.get_or("model.arch", "logistic".to_string())?.as_str() {
            "logistic" => Arch::logistic(dim, classes),
            "mlp" => Arch::mlp(dim, kv.get_or("model.hidden", 32)?, classes),
            other => return Err(CliError::Invalid(format!("model.arch: unknown architecture `{other}`"))),
        };
        let k_default = 2 * pilot.max(validation_size);
        let shared = SharedMeasureSpec {
            seed: seed::derive(seed, "shared-measure"),
            k: kv.get_or("shared.k", k_default)?,
            d: dim,
            mean: kv.get_or("shared.mean", 0.0)?,
            std: kv.get_or("shared.std", 1.0)?,
        };
        let label_penalty = match kv.raw("ot.label_penalty") {
            None | Some("auto") => None,
            Some(_) => Some(kv.require("ot.label_penalty")?),
        };
        let p0 = match kv.raw("select.p0") {
            None | Some("uniform") => vec![1.0 / num_sellers as f64; num_sellers],
            Some(_) => kv.list("select.p0")?.expect("present"),
        };
        let estimator = EstimatorKind::parse(&kv.get_or("select.estimator", "affine_combinewad".to_string())?)
            .map_err(|e| CliError::Invalid(format!("select.estimator: {e}")))?;
        let cfg = Self {
            name,
            seed,
            out,
            data,
            validation_size,
            pilot,
            num_sellers,
            partition: parse_partition(kv, num_sellers)?,
            fed,
            arch,
            shared,
            t: kv.get_or("ot.t", DEFAULT_T)?,
            t_min: kv.get_or("ot.t_min", DEFAULT_T_MIN)?,
            label_penalty,
            trials: kv.get_or("trial.count", 12)?,
            n0: kv.get_or("trial.n0", 60)?,
            n1: kv.get_or("trial.n1", 120)?,
            formal_n: kv.get_or("formal.n", 600)?,
            estimator,
            p0,
            steps: kv.get_or("select.steps", 40)?,
            schedule: StepSchedule {
                alpha0: kv.get_or("select.alpha0", StepSchedule::default().alpha0)?,
                max_halvings: kv.get_or("select.max_halvings", StepSchedule::default().max_halvings)?,
                tolerance: kv.get_or("select.tolerance", StepSchedule::default().tolerance)?,
            },
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file, applying `overrides` (`key`, `value`) first.
    pub fn load(path: &Path, overrides: &[(&str, String)]) -> Result<Self, CliError> {
        let mut kv = KvConfig::load(path)?;
        for (k, v) in overrides {
            kv.set(k, v.clone());
        }
        Self::from_kv(&kv, path.parent())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Invalid(msg));
        if self.num_sellers == 0 {
            return bad("partition.sellers must be >= 1".into());
        }
        if !(self.n0 < self.n1) {
            return bad(format!("trial budgets need n0 < n1, got {} and {}", self.n0, self.n1));
        }
        if self.n1 > self.pilot {
            return bad(format!("trial.n1 = {} exceeds the pilot capacity {} per seller", self.n1, self.pilot));
        }
        if self.trials == 0 {
            return bad("trial.count must be >= 1".into());
        }
        if self.p0.len() != self.num_sellers || !estimation::on_simplex(&self.p0, 1e-9) {
            return bad(format!("select.p0 {:?} is not a mixing ratio over {} sellers", self.p0, self.num_sellers));
        }
        if let DataSource::Files { sellers, validation } = &self.data {
            if sellers.len() != self.num_sellers {
                return bad(format!("{} seller files for {} sellers", sellers.len(), self.num_sellers));
            }
            for p in sellers.iter().chain([validation]) {
                if !p.exists() {
                    return bad(format!("data file {} does not exist", p.display()));
                }
            }
        }
        self.fed.validate()?;
        self.shared.validate()?;
        Ok(())
    }

    pub fn selection_params(&self) -> SelectionParams {
        SelectionParams {
            n: self.formal_n,
            kind: self.estimator,
            p0: self.p0.clone(),
            steps: self.steps,
            schedule: self.schedule,
        }
    }
}

/// Every party's data for one scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub sellers: Vec<SellerData>,
    pub val: DiscreteMeasure,
}

impl Scenario {
    pub fn build(cfg: ScenarioConfig) -> Result<Self, CliError> {
        let (fulls, val) = match &cfg.data {
            DataSource::Synthetic {
                num_classes,
                dim,
                class_sep,
                noise,
                pool,
            } => {
                let spec = SyntheticSpec {
                    num_classes: *num_classes,
                    d: *dim,
                    class_sep: *class_sep,
                    noise: *noise,
                    means_seed: seed::derive(cfg.seed, "class-means"),
                };
                let data = spec.sample(*pool, seed::derive(cfg.seed, "seller-pool"))?;
                let split = PartitionSpec {
                    scheme: cfg.partition.clone(),
                    seed: seed::derive(cfg.seed, "partition"),
                };
                let fulls = partition(&data, &split, cfg.num_sellers)?;
                (fulls, spec.sample(cfg.validation_size, seed::derive(cfg.seed, "validation"))?)
            }
            DataSource::Files { sellers, validation } => {
                let fulls = sellers.iter().map(|p| io::read_features(p)).collect::<Result<Vec<_>, _>>()?;
                (fulls, io::read_features(validation)?)
            }
        };
        let mut sellers = Vec::with_capacity(fulls.len());
        for (i, full) in fulls.into_iter().enumerate() {
            if full.len() < cfg.pilot {
                return Err(CliError::Invalid(format!(
                    "seller {i} holds {} rows, fewer than the pilot size {}",
                    full.len(),
                    cfg.pilot
                )));
            }
            let idx = sample_indices(&mut seed::rng(seed::derive_indexed(cfg.seed, "pilot", i as u64)), full.len(), cfg.pilot);
            sellers.push(SellerData {
                pilot: full.select(&idx)?,
                full,
            });
        }
        Ok(Self { cfg, sellers, val })
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            seed: self.cfg.seed,
            num_sellers: self.cfg.num_sellers,
            shared: self.cfg.shared,
            t: self.cfg.t,
            t_min: self.cfg.t_min,
            label_penalty: self.cfg.label_penalty.unwrap_or_else(|| default_label_penalty(&self.val)),
            fed: self.cfg.fed.clone(),
            arch: self.cfg.arch.clone(),
        }
    }

    /// A platform session; `connect` selects the TCP transport.
    pub fn session(&self, connect: Option<&str>) -> Result<Session, CliError> {
        Ok(match connect {
            None => Session::in_process(self.session_config(), self.sellers.clone(), self.val.clone())?,
            Some(addr) => Session::new(self.session_config(), Box::new(TcpClient::connect(addr)?))?,
        })
    }

    /// Each party's raw datasets, for the audit.
    pub fn raw_views(&self) -> Vec<(String, DiscreteMeasure)> {
        let mut raw: Vec<(String, DiscreteMeasure)> = Vec::new();
        for (i, s) in self.sellers.iter().enumerate() {
            raw.push((seller_id(i), s.pilot.clone()));
            raw.push((seller_id(i), s.full.clone()));
        }
        raw.push((BUYER_ID.to_string(), self.val.clone()));
        raw
    }

    pub fn write_data(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut written = Vec::new();
        let mut put = |name: String, data: &DiscreteMeasure| -> Result<(), CliError> {
            let path = dir.join(name);
            io::write_features(&path, data)?;
            written.push(path);
            Ok(())
        };
        for (i, s) in self.sellers.iter().enumerate() {
            put(format!("{}.pilot.csv", seller_id(i)), &s.pilot)?;
            put(format!("{}.full.csv", seller_id(i)), &s.full)?;
        }
        put("validation.csv".into(), &self.val)?;
        Ok(written)
    }
}

/// Paths of a scenario's artifacts.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn records(&self) -> PathBuf {
        self.dir.join("records.jsonl")
    }
    pub fn audit(&self) -> PathBuf {
        self.dir.join("audit.jsonl")
    }
    pub fn report(&self) -> PathBuf {
        self.dir.join("report.csv")
    }
    pub fn curves(&self) -> PathBuf {
        self.dir.join("curves.csv")
    }
    pub fn selection(&self) -> PathBuf {
        self.dir.join("selection.json")
    }
    pub fn trajectory(&self) -> PathBuf {
        self.dir.join("trajectory.csv")
    }
    pub fn formal(&self) -> PathBuf {
        self.dir.join("formal.json")
    }
}

/// Outcome of formal training, as persisted in `formal.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormalResult {
    pub run_id: String,
    pub p: Vec<f64>,
    pub n: usize,
    pub eval: EvalResult,
}

/// Names the pipeline phase an error came from.
fn phase<T>(name: &'static str, r: Result<T, impl Into<CliError>>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Phase {
        phase: name,
        source: Box::new(e.into()),
    })
}

pub fn trial_phase(scenario: &Scenario, session: &mut Session) -> Result<Vec<TrialRecord>, CliError> {
    let cfg = &scenario.cfg;
    phase(
        "trial-runs",
        run_trial_phase(session, cfg.trials, &[cfg.n0, cfg.n1], &RatioSampler::Standard),
    )
}

pub fn selection_phase(scenario: &Scenario, session: &mut Session) -> Result<SelectionOutcome, CliError> {
    phase("select", run_selection_phase(session, &scenario.cfg.selection_params()))
}

pub fn formal_phase(scenario: &Scenario, session: &mut Session, p: &[f64]) -> Result<FormalResult, CliError> {
    let cfg = &scenario.cfg;
    let fed = FedConfig {
        seed: seed::derive(cfg.seed, "formal-fl"),
        ..cfg.fed.clone()
    };
    let (_, eval) = phase("formal-train", run_formal_training(session, p, cfg.formal_n, &fed))?;
    Ok(FormalResult {
        run_id: "formal".into(),
        p: p.to_vec(),
        n: cfg.formal_n,
        eval,
    })
}

/// Everything `run_scenario` produced.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub records: Vec<TrialRecord>,
    pub selection: SelectionOutcome,
    pub formal: FormalResult,
    pub log: AuditLog,
}

/// Trial phase, fit, selection, formal training and report in one session.
pub fn run_scenario(scenario: &Scenario, connect: Option<&str>, out: &Path) -> Result<ScenarioRun, CliError> {
    let art = Artifacts::new(out)?;
    let mut session = scenario.session(connect)?.with_records(&art.records())?;
    let records = trial_phase(scenario, &mut session)?;
    let selection = selection_phase(scenario, &mut session)?;
    let formal = formal_phase(scenario, &mut session, &selection.p_star)?;
    let log = session.finish();
    log.write(&art.audit())?;
    report::write_report(&art.report(), &records, Some(&formal), scenario.cfg.num_sellers)?;
    report::write_curves(&art.curves(), &records)?;
    report::write_trajectory(&art.trajectory(), &selection.trajectory)?;
    report::write_json(&art.selection(), &selection)?;
    report::write_json(&art.formal(), &formal)?;
    Ok(ScenarioRun {
        records,
        selection,
        formal,
        log,
    })
}

//! Performance estimators fitted on trial runs, two-scale projection to
//! larger budgets, and mixing-ratio optimization on the simplex.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fedwad::FedWadError;
use crate::ot::OtError;

mod estimator;
mod optimize;
mod oracle;
mod rational;

pub use estimator::{fit, predict, r_squared, EstimatorKind, FittedEstimator, RSquared, DEFAULT_RIDGE, RATIONAL_FLOOR};
pub use optimize::{
    min_budget_for_target, on_simplex, optimize_ratio, project_scale, project_simplex, projection_weights,
    ratio_gradient, ratio_gradient_with, DistanceEval, OptimizeOutcome, StepSchedule, TrajectoryPoint,
    WassersteinOracle,
};
pub use oracle::{allocate, DistanceMode, SubsetOracle};

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("no trial records")]
    EmptyRecords,
    #[error("invalid trial record {run_id}: {reason}")]
    InvalidRecord { run_id: String, reason: String },
    #[error("expected {expected} sources, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0} estimators need a single budget, records mix {1} and {2}")]
    MixedBudgets(EstimatorKind, usize, usize),
    #[error("design matrix has rank {rank} < {params} parameters; use a positive ridge")]
    RankDeficient { rank: usize, params: usize },
    #[error("ridge must be >= 0, got {0}")]
    InvalidRidge(f64),
    #[error("{kind} expects {expected} parameters, got {got}")]
    ParamLength { kind: EstimatorKind, expected: usize, got: usize },
    #[error("non-finite estimator parameters")]
    NonFinite,
    #[error("unknown estimator kind {0:?}")]
    UnknownKind(String),
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("mixing ratio off the simplex: {0:?}")]
    OffSimplex(Vec<f64>),
    #[error("source {seller} has {available} pilot rows, {requested} requested")]
    BudgetExceedsPilot { seller: usize, requested: usize, available: usize },
    #[error(transparent)]
    FedWad(#[from] FedWadError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error("trial record file line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One trial run: mixing ratio, budget, distance and validation accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub run_id: String,
    pub p: Vec<f64>,
    pub n: usize,
    pub w: f64,
    pub v: f64,
}

impl TrialRecord {
    pub fn validate(&self) -> Result<(), EstimationError> {
        let bad = |reason: String| EstimationError::InvalidRecord {
            run_id: self.run_id.clone(),
            reason,
        };
        if self.p.is_empty() || !on_simplex(&self.p, 1e-9) {
            return Err(bad(format!("p = {:?} is not on the simplex", self.p)));
        }
        if !(self.w >= 0.0) || !self.w.is_finite() {
            return Err(bad(format!("w = {} must be finite and >= 0", self.w)));
        }
        if !(0.0..=1.0).contains(&self.v) {
            return Err(bad(format!("v = {} outside [0, 1]", self.v)));
        }
        Ok(())
    }
}

pub fn write_records(path: &Path, records: &[TrialRecord]) -> Result<(), EstimationError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Append one record and flush it to disk before returning.
pub fn append_record(path: &Path, record: &TrialRecord) -> Result<(), EstimationError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(record).map_err(std::io::Error::from)?;
    line.push(b'\n');
    f.write_all(&line)?;
    f.sync_data()?;
    Ok(())
}

/// Read a JSONL record file; a missing file reads as empty. A torn final line
/// (no trailing newline, unparsable) is ignored.
pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>, EstimationError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => log::warn!("ignoring torn final record line"),
            Err(source) => return Err(EstimationError::Parse { line: i + 1, source }),
        }
    }
    Ok(out)
}

/// Records at budget `n`.
pub fn at_budget(records: &[TrialRecord], n: usize) -> Vec<TrialRecord> {
    records.iter().filter(|r| r.n == n).cloned().collect()
}

/// Distinct budgets in ascending order.
pub fn budgets(records: &[TrialRecord]) -> Vec<usize> {
    let mut b: Vec<usize> = records.iter().map(|r| r.n).collect();
    b.sort_unstable();
    b.dedup();
    b
}

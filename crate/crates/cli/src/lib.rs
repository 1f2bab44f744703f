//! Scenario configs, experiment studies and report emission for the
//! `wadmarket` command-line tool.

use std::path::{Path, PathBuf};

use thiserror::Error;
use wadmarket_core::estimation::EstimationError;
use wadmarket_core::fedwad::FedWadError;
use wadmarket_core::fl::FlError;
use wadmarket_core::ot::OtError;
use wadmarket_market::MarketError;

pub mod config;
pub mod report;
pub mod scenario;
pub mod studies;

pub use config::KvConfig;
pub use report::Table;
pub use scenario::{run_scenario, Artifacts, DataSource, FormalResult, Scenario, ScenarioConfig, ScenarioRun};
pub use studies::{run_study, Study};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{origin} line {line}: {reason}")]
    Config { origin: String, line: usize, reason: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("{phase} failed: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<CliError>,
    },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    FedWad(#[from] FedWadError),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

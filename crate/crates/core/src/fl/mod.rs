//! Desk-scale federated learning: synthetic tasks, non-i.i.d. partitions,
//! small softmax models trained with local SGD, and FedAvg, FedProx,
//! Scaffold and FedNova aggregation.

use thiserror::Error;

use crate::ot::OtError;

mod data;
pub mod io;
mod model;
mod train;

pub use data::{generate_synthetic, partition, sample_indices, PartitionScheme, PartitionSpec, SyntheticSpec};
pub use model::{evaluate, Arch, EvalResult, ModelParams};
pub use train::{
    aggregate, centralized_train, client_seed, fed_train, local_train, Algorithm, ClientUpdate, Controls,
    FedConfig, FedOutcome, LocalAux, LocalContext, ServerState,
};

#[derive(Debug, Error)]
pub enum FlError {
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error("invalid configuration: {0}")]
    InvalidSpec(String),
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("dataset has no labels")]
    Unlabeled,
    #[error("label {0} does not occur in the data")]
    AbsentLabel(usize),
    #[error("non-finite model weights")]
    NonFinite,
    #[error("training diverged (non-finite loss) in round {round}")]
    Diverged { round: usize },
    #[error("no client updates to aggregate")]
    NoUpdates,
    #[error("no non-empty training sources")]
    NoSources,
    #[error("feature file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

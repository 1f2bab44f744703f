//! Buyer / seller / platform roles for a federated data marketplace: the
//! message schema, loopback and TCP transports, trial and selection phases,
//! formal training, and an audit that no raw rows leave their owner.

use thiserror::Error;
use wadmarket_core::estimation::EstimationError;
use wadmarket_core::fedwad::FedWadError;
use wadmarket_core::fl::FlError;
use wadmarket_core::ot::OtError;

pub mod audit;
pub mod codec;
pub mod party;
pub mod session;
pub mod transport;

pub use audit::{audit_no_raw_leak, AuditEntry, AuditLog, AuditReport, Rule, Violation};
pub use codec::{decode, encode, CodecError, Envelope, Message, UpdateAux};
pub use party::{Buyer, Party, PartyHost, PartyParams, Seller, SellerData, BUYER_ID, PLATFORM_ID};
pub use session::{
    run_formal_training, run_selection_phase, run_trial_phase, seller_id, RatioSampler, SelectionOutcome,
    SelectionParams, Session, SessionConfig,
};
pub use transport::{serve, InProcess, TcpClient, Transport, DEFAULT_PORT};

#[derive(Debug, Error)]
pub enum MarketError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("out-of-order message from {sender}: seq {got} after {last}")]
    OutOfOrder { sender: String, got: u64, last: u64 },
    #[error("unknown party `{0}`")]
    UnknownParty(String),
    #[error("{party} cannot handle `{tag}` here")]
    Unexpected { party: String, tag: String },
    #[error("seller {seller} holds {available} rows, trial needs {requested}")]
    BudgetExceedsPilot { seller: String, requested: usize, available: usize },
    #[error("seller {seller} holds {available} rows, formal training needs {requested}")]
    InsufficientData { seller: String, requested: usize, available: usize },
    #[error("selection needs trial records at two distinct budgets, found {0:?}")]
    NotEnoughBudgets(Vec<usize>),
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error("remote party error: {0}")]
    Remote(String),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    FedWad(#[from] FedWadError),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

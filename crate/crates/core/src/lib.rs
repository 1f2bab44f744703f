//! Core numerics for federated model marketplaces.
//!
//! * [`ot`]: discrete optimal transport (exact network simplex and entropic
//!   Sinkhorn), dual potentials and calibrated-gradient data valuation.
//! * [`fedwad`]: privacy-preserving Wasserstein approximation through
//!   interpolating measures anchored on a shared random measure, including
//!   the multi-source CombineWad and AggWad quantities.
//! * [`fl`]: synthetic data, non-i.i.d. partitioning, tiny models and the
//!   FedAvg / FedProx / Scaffold / FedNova training loop.
//! * [`estimation`]: trial records, performance estimators, scaling-law
//!   projection and mixing-ratio optimization on the simplex.

pub mod estimation;
pub mod fedwad;
pub mod fl;
pub mod ot;
pub mod seed;
pub mod stats;

pub use ot::{CalibratedScores, CostMatrix, DiscreteMeasure, Method, TransportSolution};

//! Deterministic round-synchronous simulator and analysis toolkit for
//! transactional-memory scheduling under adversarial transaction generation.
//!
//! The system model: `m` shared objects, transactions whose *type* is the set
//! of objects they may touch, and a synchronous round loop in which every
//! invoked transaction commits unless another transaction invoked at the same
//! round shares one of its objects, in which case all parties abort.
//!
//! Module map:
//! - [`model`] — objects, types, transactions, conflicts.
//! - [`combinatorics`] — the pairwise-intersecting set family, greedy
//!   colorings, and conflict-graph constructions.
//! - [`engine`] — the round loop, commit/abort resolution, traces, and the
//!   two-thread symmetry livelock harness.
//! - [`adversary`] — (ρ,b)-constrained generators and the admissibility
//!   verifier.
//! - [`sched_centralized`] — the greedy FIFO scheduler and its bound
//!   calculator.
//! - [`sched_distributed`] — the epoch-structured per-processor scheduler
//!   with its abort-feedback bit channel, and its bound calculator.
//! - [`analysis`] — post-hoc trace analytics and stability reports.

pub mod adversary;
pub mod analysis;
pub mod combinatorics;
pub mod engine;
pub mod model;
pub mod sched_centralized;
pub mod sched_distributed;
mod util;

pub use model::{ObjectId, ProcessorId, Round, SystemConfig, Transaction, TxId, TxType};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input to an operation (bad parameters, bad file contents).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A scheduler broke the engine contract (invoked a transaction it may
    /// not invoke at this round).
    #[error("protocol violation at round {round}: {message}")]
    ProtocolViolation { round: Round, message: String },
    /// An internal guarantee of the simulated algorithm failed to hold,
    /// e.g. a processor was scheduled to invoke but had nothing to invoke.
    #[error("model violation at round {round}: {message}")]
    ModelViolation { round: Round, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

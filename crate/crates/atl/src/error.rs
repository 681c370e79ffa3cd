//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AtlError {
    /// An input vector contained NaN or infinity.
    #[error("non-finite value at position {position} of input vector")]
    NonFiniteInput { position: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Pruning every hidden unit (or the request referenced a unit that
    /// does not exist) is rejected without mutating the network.
    #[error("invalid prune request: {0}")]
    InvalidPrune(String),

    #[error("dataset error at row {row}: {message}")]
    Dataset { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, AtlError>;

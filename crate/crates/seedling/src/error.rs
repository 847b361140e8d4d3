//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeedError {
    /// Configuration rejected before any work started (bad shape, bad flag,
    /// inconsistent hyperparameters).
    #[error("config error: {0}")]
    Config(String),

    /// Tensor shape disagreement between caller and network spec.
    #[error("shape mismatch in {context}: expected {expected} elements, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A forward/backward pass produced NaN or Inf.
    #[error("non-finite value produced by {layer}")]
    NonFinite { layer: String },

    /// Malformed or out-of-contract protocol traffic.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Operation needs more data before it can serve (e.g. replay below its
    /// minimum size, model not yet published). Callers wait and retry.
    #[error("not ready: {0}")]
    NotReady(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SeedError>;

impl SeedError {
    pub fn config(msg: impl Into<String>) -> Self {
        SeedError::Config(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        SeedError::Protocol(msg.into())
    }
}

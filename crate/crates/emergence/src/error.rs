//! Error type shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EmergenceError>;

#[derive(Debug, Error)]
pub enum EmergenceError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("state norm {norm:.3e} exceeded the blow-up guard at step {step}")]
    BlowUp { step: u64, norm: f64 },

    #[error("internal invariant failed: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

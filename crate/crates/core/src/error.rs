//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not conform for the attempted operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid configuration value (rates, widths, ratios, learning rates, ...).
    #[error("invalid config: {0}")]
    Config(String),

    /// Problem with dataset content (labels, pixel ranges, empty classes, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed serialized input; `offset` is the byte position of the defect.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A sample id was not found where it was required.
    #[error("lookup failed: {0}")]
    Lookup(String),

    /// An operation was called out of order (e.g. backward before forward).
    #[error("invalid state: {0}")]
    State(String),

    /// A caller-side contract was violated (e.g. probability rows not normalized).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Training produced a non-finite value.
    #[error("numeric failure at epoch {epoch}: {message}")]
    Numeric { epoch: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}

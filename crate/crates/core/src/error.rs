//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for an operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Elementwise log applied to a non-positive value.
    #[error("log domain error: value {value} at flat index {index} is not strictly positive")]
    LogDomain { value: f64, index: usize },

    /// Token or row index outside the valid range.
    #[error("index {id} out of range for table of size {size}")]
    IndexOutOfRange { id: usize, size: usize },

    /// A caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A data split request that the corpus cannot satisfy.
    #[error("data sizing error: {0}")]
    Sizing(String),

    /// Malformed input file or serialized artifact.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn sizing(msg: impl Into<String>) -> Self {
        Error::Sizing(msg.into())
    }
}

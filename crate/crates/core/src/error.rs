use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index ({x}, {z}) out of bounds for {n_x}x{n_z} grid")]
    OutOfBounds {
        x: usize,
        z: usize,
        n_x: usize,
        n_z: usize,
    },

    #[error("flat index {index} out of bounds for {len} elements")]
    FlatOutOfBounds { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("symbol {symbol} out of range for modulation order {order}")]
    InvalidSymbol { symbol: usize, order: usize },

    #[error("degenerate correlation matrix: square root is identically zero")]
    DegenerateCorrelation,

    #[error("noise calibration failed: received signal power is zero")]
    ZeroReceivedPower,

    #[error("forward pass did not retain intermediate fields")]
    MissingIntermediates,

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("engines disagree at {n}x{n}: relative error {error:.3e} exceeds {tolerance:.3e}")]
    EngineMismatch {
        n: usize,
        error: f64,
        tolerance: f64,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn mismatch(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

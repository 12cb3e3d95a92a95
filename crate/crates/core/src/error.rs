use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("message {value} for device {device} is out of range (must be < {limit})")]
    InvalidMessage { device: usize, value: u32, limit: u32 },

    #[error("effective noise variance must be positive, got {0}")]
    InvalidVariance(f64),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },

    #[error("sensing matrix needs {required_bytes} bytes, over the {budget_bytes} byte budget")]
    Resource { required_bytes: u128, budget_bytes: u64 },

    #[error("AMP produced non-finite values at iteration {iteration}")]
    NumericalDivergence { iteration: usize },

    #[error("quadrature did not reach relative error {target} (last change {achieved})")]
    Precision { target: f64, achieved: f64 },

    #[error("unsupported prior: {0}")]
    UnsupportedPrior(String),

    #[error("malformed matrix file: {0}")]
    MalformedMatrix(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("operator `{0}` has no adjoint")]
    NoAdjoint(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dense materialization refused: dimension {dim} exceeds oracle cap {cap}")]
    OracleCapExceeded { dim: usize, cap: usize },

    #[error("model diverged: {0}")]
    Divergence(String),

    #[error("incompatible formulation: {0}")]
    IncompatibleFormulation(String),

    #[error("solver breakdown: {0}")]
    Breakdown(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for {len} sellers")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    /// The iteration cap was hit; `last` holds the final iterate.
    #[error("solver failed after {iterations} iterations (residual {residual:e})")]
    SolverFailure {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("unsupported parameters: {0}")]
    UnsupportedParameters(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("resource limit: {0}")]
    ResourceLimit(String),
}

pub(crate) fn check_index(index: usize, len: usize) -> Result<()> {
    if index >= len {
        Err(Error::IndexOutOfRange { index, len })
    } else {
        Ok(())
    }
}

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unsupported exponent p = {0}; only p = 2 and p = inf are supported here")]
    UnsupportedExponent(f64),

    #[error("power iteration did not converge after {iterations} iterations (last estimate {last})")]
    NotConverged { iterations: usize, last: f64 },

    #[error("grid oracle supports input dimension <= 3 and resolution <= 401, got d = {dim}, resolution = {resolution}")]
    GridTooLarge { dim: usize, resolution: usize },

    #[error("degenerate network: every layer has zero l1 norm")]
    DegenerateNetwork,

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

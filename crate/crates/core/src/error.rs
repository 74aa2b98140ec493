//! Crate-wide error type.

/// Errors surfaced by the numeric core and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("empty batch")]
    EmptyBatch,

    /// The Neumann iterate norm grew past the divergence guard, which
    /// signals that eta is too large for the curvature at hand.
    #[error("neumann series diverged at iteration {iteration} (growth {growth:.3e})")]
    NeumannDivergence { iteration: usize, growth: f64 },

    #[error("enumeration too large: {0} trajectories exceed the guard")]
    EnumerationTooLarge(u128),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

use thiserror::Error;

/// Errors surfaced by the simulation and synchronization primitives.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A configuration value violates its invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A timestamp interval collapsed to zero where a ratio is required.
    #[error("degenerate interval: {0}")]
    DegenerateInterval(String),

    /// Sample statistics need at least two values.
    #[error("variance undefined: need at least 2 samples, got {0}")]
    VarianceUndefined(usize),

    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A projection was requested for a time before the current anchor.
    #[error("out of order: {0}")]
    OutOfOrder(String),

    /// An engine was queried before it received any synchronization data.
    #[error("not initialized: {0}")]
    NotInitialized(String),
}

pub type Result<T> = std::result::Result<T, Error>;

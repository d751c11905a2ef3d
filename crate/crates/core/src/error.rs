use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition (dimensions, partitions, sequences).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index range [{start}, {end}] outside signal of length {len}")]
    Range { start: usize, end: usize, len: usize },

    /// No certificate exists for the supplied system.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Simulation produced a non-finite state, typically a barrier blow-up.
    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

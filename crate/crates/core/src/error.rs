use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model parameter is outside its admissible range.
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: String, reason: String },

    /// The operation was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// A matrix or graph does not have the required structure.
    #[error("structural error: {0}")]
    Structural(String),

    /// A formula hits a pole (e.g. a zero denominator).
    #[error("singularity: {0}")]
    Singularity(String),

    /// A queue is not stable (load factor at or above one).
    #[error("unstable queue: load factor {load} >= 1")]
    Unstable { load: f64 },

    /// The Markov chain has no enabled transition.
    #[error("chain is absorbed at t = {time}")]
    Absorbed { time: f64 },

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

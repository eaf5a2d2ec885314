use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: malformed json: {message}")]
    Json { line: usize, message: String },

    #[error("line {line}: {path}: {message}")]
    Schema { line: usize, path: String, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("no protagonist: candidate {0} has no non-null participant")]
    NoProtagonist(usize),

    #[error("overlapping event spans")]
    OverlappingSpans,

    #[error("undefined cosine: zero vector")]
    UndefinedCosine,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("tape already consumed")]
    TapeConsumed,

    #[error("non-deterministic function: two evaluations differ ({0} vs {1})")]
    NonDeterministic(f64, f64),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn schema(line: usize, path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { line, path: path.into(), message: message.into() }
    }

    /// Numeric failures (divergence, non-finite values, failed checks) as
    /// opposed to bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Diverged { .. } | Error::NonDeterministic(..) | Error::UndefinedCosine
        )
    }
}

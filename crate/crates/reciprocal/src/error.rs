//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by dataset handling, training, evaluation, and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A line of an input file could not be parsed. Carries the 1-based line
    /// number so the offending record can be located.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Input data violates a structural invariant (conflicting match labels,
    /// out-of-range ids, duplicate stream events, ...).
    #[error("invalid data: {0}")]
    Validation(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// A user id does not exist on the referenced side.
    #[error("id out of range: {0}")]
    Index(String),

    /// Negative or vacant-slot sampling found no eligible candidate.
    #[error("no candidate available: {0}")]
    NoCandidate(String),

    /// A metric recurrence hit a zero denominator.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error: 2 for config/usage problems,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}

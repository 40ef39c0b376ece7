//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// The interval uncertainty set admits no common Lyapunov certificate for
    /// the designed error feedback; shrink the relative uncertainty.
    #[error("uncertainty set too large for a common Lyapunov certificate")]
    LyapunovCertificate,

    #[error("kernel matrix numerically singular")]
    SingularKernel,

    #[error("Riccati iteration failed: {0}")]
    Riccati(String),

    #[error("terminal set construction failed: {0}")]
    TerminalSet(String),

    #[error("initial state infeasible for the tightened constraints: {0}")]
    StartupInfeasible(String),

    #[error("QP solve failed: {0}")]
    QpFailure(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

use thiserror::Error;

/// Errors raised across the workbench.
///
/// The CLI maps [`Error::Config`] to exit code 2 and the numerical variants
/// ([`Error::Truncation`], [`Error::Numerical`], [`Error::NonMonotone`]) to
/// exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("truncation guard: {0}")]
    Truncation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("see-saw iteration lost fidelity at step {iteration}: {before} -> {after}")]
    NonMonotone {
        iteration: usize,
        before: f64,
        after: f64,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures that stem from numerical guards rather than user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Truncation(_) | Error::Numerical(_) | Error::NonMonotone { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

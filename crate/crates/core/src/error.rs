//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by library operations.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration could not be loaded or failed its invariants.
    #[error("configuration error: {0}")]
    Config(String),

    /// The graph or simulation state violated a structural requirement.
    #[error("structural error: {0}")]
    Structural(String),

    /// A numerical routine failed to converge; carries the residual.
    #[error("numerical error: {reason} (residual {residual:.3e})")]
    Numerical { reason: String, residual: f64 },

    /// An operation was called on state that is missing required data.
    #[error("state error: {0}")]
    State(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}

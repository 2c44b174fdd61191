use thiserror::Error;

/// Errors produced by model construction, fitting and inference.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Malformed or inconsistent input data.
    #[error("invalid input: {0}")]
    Validation(String),
    /// Inconsistent configuration (kernel/grid/parameter choices).
    #[error("configuration error: {0}")]
    Config(String),
    /// A numerical operation failed (singular solve, degenerate spectrum, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

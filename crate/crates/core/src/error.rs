use thiserror::Error;

/// Errors produced by the sketching, recovery and certification routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A dense materialization would exceed the configured memory budget.
    #[error("resource budget exceeded: {0}")]
    Budget(String),

    /// Two sketch states were built from different sketching operators.
    #[error("incompatible sketch states: {0}")]
    Incompatible(String),

    /// A persisted sketch state or stream record could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    /// A dense factorization failed to converge.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A graph stream violated its well-formedness rules.
    #[error("malformed graph stream: {0}")]
    Graph(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

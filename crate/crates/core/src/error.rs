use thiserror::Error;

/// Failure modes shared by every module of the engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A caller-supplied argument violates an operation precondition.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A measure, rate matrix or model specification is inconsistent.
    #[error("invalid specification: {0}")]
    Spec(String),
    /// A stored record (path, sample set) is corrupt or incomplete.
    #[error("invalid data: {0}")]
    Data(String),
    /// The integration produced a non-finite or overflowing state.
    #[error("numeric failure at step {step}: {message}")]
    Numeric { step: usize, message: String },
    /// The requested combination of model and diagnostic is not supported.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    /// The input carries no spread (e.g. a point mass handed to a density estimator).
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub(crate) fn spec(msg: impl Into<String>) -> Error {
    Error::Spec(msg.into())
}

pub(crate) fn data(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}

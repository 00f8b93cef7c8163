use thiserror::Error;

/// Failures raised by kernels, the tape and the network blocks.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// Operand dimensions do not satisfy an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A computed or required shape is invalid.
    #[error("shape error: {0}")]
    Shape(String),
    /// Input values lie outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// The API was used incorrectly (foreign tape, bad index, ...).
    #[error("usage error: {0}")]
    Usage(String),
    /// A block was configured inconsistently.
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! contract {
    ($($arg:tt)*) => { $crate::error::Error::Contract(format!($($arg)*)) };
}
macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
pub(crate) use contract;
pub(crate) use shape_err;

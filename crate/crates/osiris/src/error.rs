//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Tensor dimensions are inconsistent with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A binary artifact (dataset, checkpoint, frame) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// A configuration is internally inconsistent or refers to missing inputs.
    #[error("config error: {0}")]
    Config(String),

    /// A stratified split cannot be produced from the given dataset.
    #[error("stratification error: {0}")]
    Stratification(String),

    /// Wire-protocol violation on the RU/DU link.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for usage/config problems the user
    /// can fix by changing inputs, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) | Error::Stratification(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

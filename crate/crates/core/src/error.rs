use std::io;

/// Errors produced by the detection pipeline and its file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Input data broke a format or consistency contract.
    #[error("data contract violated: {0}")]
    Data(String),
    /// Configuration could not be parsed or validated.
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

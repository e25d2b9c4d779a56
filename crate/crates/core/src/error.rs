use std::io;

/// Errors raised anywhere in the training stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not satisfy a primitive's shape rule.
    #[error("shape error: {0}")]
    Shape(String),
    /// A NaN or infinity reached an operation or a gradient.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Invalid configuration or unreachable sampling request.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed checkpoint or dataset file.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

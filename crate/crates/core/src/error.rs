use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Input data violating a container invariant.
    #[error("invalid data: {0}")]
    Data(String),
    /// An API called in the wrong order or with mismatched state.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("empty batch: no valid anchors")]
    EmptyBatch,
    /// Malformed or corrupted file contents.
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

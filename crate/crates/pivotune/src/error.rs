//! Error taxonomy shared across the crate.
//!
//! Variants map onto process exit codes (see [`Error::exit_code`]): config
//! problems exit 2, data/IO problems exit 3, numeric failures exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension disagreement between tensors.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Invalid configuration value or key.
    #[error("config error: {0}")]
    Config(String),

    /// Missing, malformed, or inconsistent data on disk.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values or other numeric breakdown.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API precondition was violated by the caller.
    #[error("usage error: {0}")]
    Usage(String),

    /// A prompt token not present in the vocabulary manifest.
    #[error("vocabulary error: unknown token `{0}`")]
    UnknownToken(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dim(_) | Error::Usage(_) => 2,
            Error::Data(_) | Error::UnknownToken(_) | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

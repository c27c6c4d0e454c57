use std::io;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shapes, lengths, wiring).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Unknown identifiers or invalid configuration values.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed artifact files.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! ensure {
    ($cond:expr, $kind:ident, $($arg:tt)+) => {
        if !($cond) {
            return Err($crate::Error::$kind(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;

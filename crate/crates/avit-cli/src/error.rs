//! Error type for dataset, checkpoint and configuration handling.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed bytes at a known position (NetPBM headers and payloads).
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    /// A file's structure is invalid (checkpoint magic/version/records).
    #[error("format error: {0}")]
    Format(String),
    /// The user supplied something unusable (missing mask, bad config key,
    /// impossible fold count).
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] avit_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn parse_err(offset: usize, message: impl Into<String>) -> CliError {
    CliError::Parse {
        offset,
        message: message.into(),
    }
}

#[macro_export]
macro_rules! format_err {
    ($($arg:tt)*) => {
        $crate::error::CliError::Format(format!($($arg)*))
    };
}

#[macro_export]
macro_rules! input_err {
    ($($arg:tt)*) => {
        $crate::error::CliError::Input(format!($($arg)*))
    };
}

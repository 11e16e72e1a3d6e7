//! Error type shared across the core crate.

use alloc::string::String;
use core::fmt;

/// Errors produced by tensor ops, model assembly and training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// A tensor operation received incompatibly shaped operands. The message
    /// names the operation and both shapes.
    Shape(String),
    /// A model or run configuration failed validation.
    Config(String),
    /// An invariant of the training/checkpoint machinery was violated
    /// (e.g. backward on a non-scalar, a checkpoint/model name mismatch).
    Contract(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Contract(msg) => write!(f, "contract error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

/// Formats a shape as `[a, b, c]` for error messages.
pub(crate) fn fmt_shape(shape: &[usize]) -> String {
    use alloc::format;
    let mut s = String::from("[");
    for (i, d) in shape.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(&format!("{d}"));
    }
    s.push(']');
    s
}

#[doc(hidden)]
pub use alloc::format as __format;

#[macro_export]
macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::Error::Shape($crate::error::__format!($($arg)*))
    };
}

#[macro_export]
macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::Error::Config($crate::error::__format!($($arg)*))
    };
}

#[macro_export]
macro_rules! contract_err {
    ($($arg:tt)*) => {
        $crate::Error::Contract($crate::error::__format!($($arg)*))
    };
}

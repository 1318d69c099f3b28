use alloc::string::String;
use core::fmt;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    Shape(String),
    /// A configuration value is invalid for the requested operation.
    Config(String),
    /// A numeric value left its admissible domain (NaN, out-of-range probability).
    Numeric(String),
    /// Procedural generation could not satisfy its constraints.
    Generation(String),
    /// A quantity is mathematically undefined for the given inputs.
    Undefined(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "dimension error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Generation(m) => write!(f, "generation error: {m}"),
            Error::Undefined(m) => write!(f, "undefined: {m}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use shape_err;

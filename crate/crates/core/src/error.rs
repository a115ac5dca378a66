//! Error type shared across the crate.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by transforms, models, samplers and the CLI plumbing.
#[derive(Debug)]
pub enum Error {
    /// An argument violated a documented precondition.
    InvalidArgument(String),
    /// An operation was invoked before required setup (e.g. a missing
    /// variance table).
    InvalidState(String),
    /// A computation degenerated numerically (underflow, non-finite values).
    NumericallyDegenerate(String),
    /// A configuration file failed to parse or validate.
    Config(String),
    /// A data file (CSV, sample archive, model file) had the wrong schema
    /// or version.
    Schema(String),
    /// Wrapper around I/O failures.
    Io(std::io::Error),
}

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn invalid_state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::NumericallyDegenerate(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InvalidState(msg) => write!(f, "invalid state: {msg}"),
            Error::NumericallyDegenerate(msg) => write!(f, "numerically degenerate: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Schema(msg) => write!(f, "schema error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

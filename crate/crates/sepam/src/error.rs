//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("divergent: {0}")]
    Divergent(String),
    #[error("state space of {states} states exceeds cap {cap}")]
    CapExceeded { states: u128, cap: u128 },
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}

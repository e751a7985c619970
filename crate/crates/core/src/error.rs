use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),
    /// A sampling grid is too coarse to resolve the features it must carry.
    #[error("resolution error: {0}")]
    Resolution(String),
    /// A frequency or time grid does not cover enough of a resonance or pulse.
    #[error("coverage error: {0}")]
    Coverage(String),
    /// A distribution or spectrum lost too much mass to truncation.
    #[error("truncation error: {0}")]
    Truncation(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("ordering error: record {index} has pulse index {pulse} after {previous}")]
    Ordering { index: u64, pulse: u64, previous: u64 },
    #[error("truncated input: {0}")]
    Truncated(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

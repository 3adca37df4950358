use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("integration diverged at step {step} (t = {time}): {reason}")]
    Divergence { step: usize, time: f64, reason: String },
    #[error("fit failure: {0}")]
    Fit(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("cache format error: {0}")]
    Format(String),
    #[error("cache integrity error: {0}")]
    Integrity(String),
    #[error("unsupported cache version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

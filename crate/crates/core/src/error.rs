use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulator, decoder and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid channel: {0}")]
    Channel(String),

    #[error("species contract violated: {0}")]
    Species(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("decoder invariant violated: {0}")]
    Decoder(String),

    #[error("insufficient data for fit: {0}")]
    Fit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

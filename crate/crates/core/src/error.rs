use std::io;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A layout, config, checkpoint or transfer setup is invalid.
    #[error("configuration error: {0}")]
    Config(String),
    /// An API was called out of contract (wrong shapes, stepping a finished episode, stale tape).
    #[error("usage error: {0}")]
    Usage(String),
    /// Training produced a non-finite quantity.
    #[error("training error: {0}")]
    Training(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn usage_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}

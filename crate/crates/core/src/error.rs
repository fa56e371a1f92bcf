use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A raw parameter value lies outside its declared bounds.
    #[error("parameter `{name}`: value {value} outside bounds [{lower}, {upper}]")]
    Bounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    /// A numeric input lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Training data or a run log is unusable.
    #[error("data error: {0}")]
    Data(String),

    /// The covariance matrix could not be factorized even with maximum jitter.
    #[error("covariance matrix not positive definite after jitter {jitter:e}")]
    Conditioning { jitter: f64 },

    #[error("invalid search space: {0}")]
    Space(String),

    #[error("run log {path}: line {line}: {message}")]
    Replay {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn arg(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

//! Error type shared by every module of the crate.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value (model, loss, optimizer, generator, run).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data that cannot be used, e.g. a record with no valid sample.
    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Checkpoint file is truncated or internally inconsistent.
    #[error("corrupt checkpoint {path}: {message}")]
    Corruption { path: PathBuf, message: String },

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss {value} at training epoch {epoch}, batch {batch} (subjects: {subjects})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        value: f64,
        subjects: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

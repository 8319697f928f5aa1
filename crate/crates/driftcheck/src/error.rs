use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DriftError {
    #[error(transparent)]
    Core(#[from] driftcheck_core::Error),
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("config parse error in {path}: {msg}")]
    ConfigParse { path: PathBuf, msg: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model file {path}: {msg}")]
    ModelJson { path: PathBuf, msg: String },
    #[error("log write error on {path}: {source}")]
    LogWrite {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("log read error on {path}: {source}")]
    LogRead {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot summarize an empty record set")]
    EmptyReport,
}

impl DriftError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Self::Format { path: path.into(), msg: msg.into() }
    }

    /// The core error underneath, if any.
    pub fn core(&self) -> Option<&driftcheck_core::Error> {
        match self {
            Self::Core(e) => Some(e),
            _ => None,
        }
    }
}

pub type Result<T, E = DriftError> = std::result::Result<T, E>;

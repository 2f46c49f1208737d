use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, usage or configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A numerical kernel failed (singular system, non-finite output).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A pipeline stage was invoked before the stage producing its inputs.
    #[error("stage `{stage}` needs `{missing}`, which is produced by `{producer}`; run `{producer}` first")]
    StageOrder {
        stage: String,
        producer: String,
        missing: PathBuf,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::StageOrder { .. } => 1,
            Error::Data(_) | Error::Io { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MdsamError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MdsamError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid value for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parse error at line {line}, field {field}: {message}")]
    Parse {
        line: u64,
        field: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("trace comparison failed: {0}")]
    Comparison(String),

    #[error("sweep cell ({cell}) failed: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<MdsamError>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MdsamError {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

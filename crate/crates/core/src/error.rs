use std::io;
use std::path::PathBuf;

use thiserror::Error;


use crate::llm_client::LlmError;
use crate::terminology::SemanticType;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },

    #[error("non-reportable semantic type: {0}")]
    NonReportable(SemanticType),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("backend error: {0}")]
    Backend(String),

    #[error(transparent)]
    Llm(#[from] LlmError),

    #[error("output error: {0}")]
    Output(#[source] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(origin: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            origin: origin.into(),
            line,
            message: message.into(),
        }
    }
}

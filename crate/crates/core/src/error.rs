use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    #[error("{}validation failed for sample `{sample_id}`: {message}", line_prefix(*.line))]
    Validation {
        sample_id: String,
        line: Option<usize>,
        message: String,
    },

    #[error("no samples: {0}")]
    EmptySet(String),

    #[error("{} prediction(s) reference unknown sample ids: {}", .0.len(), .0.join(", "))]
    OrphanPredictions(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn line_prefix(line: Option<usize>) -> String {
    match line {
        Some(l) => format!("line {l}: "),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(sample_id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            sample_id: sample_id.into(),
            line: None,
            message: message.into(),
        }
    }
}

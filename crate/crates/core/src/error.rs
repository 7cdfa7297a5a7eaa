use std::path::PathBuf;

use thiserror::Error;

/// One failed attempt against a generation endpoint.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttemptFailure {
    pub attempt: u32,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("insufficient candidates for {context}: need {needed}, have {available}")]
    InsufficientCandidates {
        context: String,
        needed: usize,
        available: usize,
    },

    #[error("parse error in {source_name} line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error(
        "alignment error: {} has {left_lines} lines but {} has {right_lines}",
        left.display(),
        right.display()
    )]
    Alignment {
        left: PathBuf,
        left_lines: usize,
        right: PathBuf,
        right_lines: usize,
    },

    #[error("{} is not valid UTF-8 (line {line})", path.display())]
    Decode { path: PathBuf, line: usize },

    #[error("unknown language: {0}")]
    UnknownLanguage(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("transport error after {} attempts: {}", attempts.len(), attempts.last().map(|a| a.message.as_str()).unwrap_or(""))]
    Transport { attempts: Vec<AttemptFailure> },

    #[error("endpoint returned status {status}: {body}")]
    Endpoint { status: u16, body: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

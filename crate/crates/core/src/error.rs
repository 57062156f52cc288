use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the lab.
///
/// Variants are grouped so the command line can map them onto exit codes:
/// configuration and state problems, data/format problems, and numeric or
/// domain failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at layer {layer}: {detail}")]
    NonFinite { layer: usize, detail: String },

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error in {term}: {detail}")]
    Domain { term: &'static str, detail: String },

    #[error("bad magic number in {path}: expected {expected:#010x}, found {found:#010x}")]
    Magic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("bad length in {path}: {detail}")]
    Length { path: PathBuf, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(term: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            term,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

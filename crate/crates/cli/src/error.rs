use std::path::PathBuf;

use magdrop_core::Error;
use thiserror::Error as ThisError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("{0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("malformed artifact {path}: {detail}")]
    Artifact { path: PathBuf, detail: String },
}

impl CliError {
    /// 2 configuration/usage/state, 3 data or artifact files, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e {
                Error::Shape(_) | Error::State(_) | Error::Config(_) | Error::Json(_) => {
                    EXIT_CONFIG
                }
                Error::Magic { .. } | Error::Length { .. } | Error::Data(_) | Error::Io { .. } => {
                    EXIT_DATA
                }
                Error::NonFinite { .. }
                | Error::NonFiniteGradient { .. }
                | Error::Domain { .. } => EXIT_NUMERIC,
            },
            CliError::Usage(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Csv { .. } | CliError::Artifact { .. } => EXIT_DATA,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

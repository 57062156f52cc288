//! Command layer of the `magdrop` binary: training runs, bound reports,
//! run comparison and artifact validation.

pub mod artifacts;
pub mod commands;
pub mod error;

use std::path::PathBuf;

use magdrop_core::config::DATA_ROOT_ENV;
use magdrop_core::{MagDropConfig, RegularizerConfig};

pub use commands::{
    cmd_bound, cmd_compare, cmd_train, cmd_validate, BoundFlags, BoundOutput, BoundRow,
    BoundSource, Comparison,
};
pub use error::{CliError, CliResult};

/// Data root from the environment, else `./data`.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

/// Regularizer with default hyperparameters, by method name.
pub fn default_regularizer(name: &str) -> CliResult<RegularizerConfig> {
    Ok(match name {
        "none" => RegularizerConfig::None,
        "dropout" => RegularizerConfig::Dropout { p: 0.3 },
        "agr" => RegularizerConfig::Agr { lambda: 0.01 },
        "magdrop" => RegularizerConfig::Magdrop(MagDropConfig::default()),
        other => {
            return Err(CliError::Usage(format!(
                "unknown regularizer `{other}` (expected none, dropout, agr or magdrop)"
            )))
        }
    })
}

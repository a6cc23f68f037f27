//! Command-line pipeline around the `freezecast` library: synthetic data,
//! post-processing, survival forecasts, verification and plot tables, all
//! written under a run directory stamped with a hash of the configuration.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;

use std::path::{Path, PathBuf};

pub use commands::{cmd_forecast, cmd_plotdata, cmd_postprocess, cmd_run, cmd_synth, cmd_verify};
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Data(#[from] freezecast::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for configuration errors, 3 for data errors, 4 for violated output
    /// invariants.
    pub fn exit_code(&self) -> i32 {
        use freezecast::Error as E;
        match self {
            CliError::Config(_) | CliError::Data(E::Config(_)) => 2,
            CliError::Invariant(_) | CliError::Data(E::InvalidCurve(_)) => 4,
            _ => 3,
        }
    }
}

//! Reproducible pipelines over the `lungsed` toolkit.
//!
//! Each command is a library function so that tests can drive it without a
//! subprocess. All randomness derives from the configured seed, and every
//! output directory receives the effective configuration as `config.txt`.

pub mod commands;
pub mod config;
mod io;

pub use commands::{
    cmd_evaluate, cmd_info, cmd_interpret, cmd_predict, cmd_synth, cmd_train, EvaluateArgs, InfoArgs, InterpretArgs,
    ModelInfo, PredictArgs, SynthArgs, SynthOutcome, TrainArgs, TrainOutcome,
};
pub use config::RunConfig;

use thiserror::Error;

use lungsed::train::TrainError;

/// Name of the echoed configuration in every output directory.
pub const CONFIG_FILE: &str = "config.txt";
/// Checkpoint written by `train`.
pub const CHECKPOINT_FILE: &str = "model.lstcn";
/// Per-epoch history written by `train`.
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    /// 1 for usage errors, 2 for data errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub(crate) fn data(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {err}"))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Runs `f` on a pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

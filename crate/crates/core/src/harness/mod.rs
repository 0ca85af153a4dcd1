//! Experiment orchestration: configuration, training and evaluation
//! pipelines, metrics, checkpoints and plot data.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::env::EnvError;
use crate::plant::PlantError;
use crate::ppo::PpoError;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, Preset};
pub use metrics::{EvalReport, ReplayReport};
pub use train::Trainer;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0} needs a non-empty input")]
    EmptyInput(&'static str),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

//! Two-stage training: optimizer, Task-1/Task-2 scheduler and the loops.

mod optim;
mod scheduler;
mod trainer;

use std::path::PathBuf;

use crate::model::ModelError;
use crate::store::StoreError;

pub use optim::{optimizer_step, AdamState, ADAM_EPS, BETA1, BETA2};
pub use scheduler::{sample_task, task_prob, SchedulerCfg, SchedulerKind};
pub use trainer::{
    run_stage1, run_stage2, train, LrSchedule, Stage, StageCfg, TrainLog, TrainRecord, TrainState,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite gradient in {param}")]
    NonFiniteGradient { param: String },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

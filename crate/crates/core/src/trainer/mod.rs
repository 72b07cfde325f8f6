//! Adagrad training, evaluation and checkpoints.

mod checkpoint;
mod eval;
mod optimizer;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, Seeds, FORMAT_VERSION, MAGIC,
};
pub use eval::{evaluate, predict_all, ClassAccuracy, EvalReport, REPORT_ORDER};
pub use optimizer::{adagrad_step, OptimizerState, INITIAL_ACCUMULATOR};
pub use train::{batch_gradients, train, GradientBuffers, LogRecord, TrainInputs, TrainOutcome};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, ModelError};
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} is empty")]
    EmptyDataset(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    /// Training hit a non-finite loss or gradient. `best` is the best
    /// checkpoint seen before that point.
    #[error("training diverged at step {step}: non-finite {what}")]
    Diverged {
        step: u64,
        what: String,
        best: Option<Box<Checkpoint>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// One step is one batch.
    pub max_steps: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub workers: usize,
    /// With several workers: `true` splits each batch across them and
    /// reduces in a fixed order; `false` runs lock-per-tensor asynchronous
    /// updates.
    pub deterministic: bool,
    /// Shuffling and dropout.
    pub seed: u64,
    /// Parameter initialization.
    pub init_seed: u64,
    /// Stop as soon as an evaluation reaches this accuracy.
    pub target_accuracy: Option<f64>,
    /// Periodic and best checkpoints go here when set.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            learning_rate: 0.05,
            max_steps: 50_000_000,
            eval_every: 10_000,
            checkpoint_every: 10_000,
            log_every: 1_000,
            workers: 1,
            deterministic: true,
            seed: 0,
            init_seed: 0,
            target_accuracy: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with the learning rate of the given variant: 0.05 without
    /// intra attention, 0.025 with it.
    pub fn for_model(config: &ModelConfig) -> Self {
        Self {
            learning_rate: default_learning_rate(config),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("batch_size", self.batch_size as u64),
            ("max_steps", self.max_steps),
            ("eval_every", self.eval_every),
            ("checkpoint_every", self.checkpoint_every),
            ("log_every", self.log_every),
            ("workers", self.workers as u64),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Config(format!("{name} must be at least 1")));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

pub fn default_learning_rate(config: &ModelConfig) -> f64 {
    if config.use_intra {
        0.025
    } else {
        0.05
    }
}

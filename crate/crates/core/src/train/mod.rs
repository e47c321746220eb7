//! Multi-task training, Euler sampling in both directions, and checkpoints.

mod checkpoint;
mod optim;
mod sampler;
mod trainer;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use optim::{lr_at, AdamW};
pub use sampler::{prediction_smiles, sample, sample_product, sample_reactants, SampleRequest};
pub use trainer::{draw_task, PreparedExample, StepStats, Trainer};

use crate::bridge::BridgeError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("step {step}: non-finite loss {loss}; update skipped")]
    NonFinite { step: u64, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskMix {
    ForwardOnly,
    RetroOnly,
    MultiTask,
}

impl fmt::Display for TaskMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskMix::ForwardOnly => "forward_only",
            TaskMix::RetroOnly => "retro_only",
            TaskMix::MultiTask => "multi_task",
        })
    }
}

impl FromStr for TaskMix {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forward_only" | "forward" => Ok(TaskMix::ForwardOnly),
            "retro_only" | "retro" => Ok(TaskMix::RetroOnly),
            "multi_task" | "multi" => Ok(TaskMix::MultiTask),
            other => Err(TrainError::Config(format!("unknown task mix {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub max_steps: u64,
    pub batch_size: usize,
    pub sigma: f64,
    pub seed: u64,
    pub task_mix: TaskMix,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            warmup_steps: 5000,
            max_steps: 400_000,
            batch_size: 32,
            sigma: 1.0,
            seed: 0,
            task_mix: TaskMix::MultiTask,
            weight_decay: 0.01,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.warmup_steps > self.max_steps {
            return Err(TrainError::Config(format!(
                "warmup_steps {} exceeds max_steps {}",
                self.warmup_steps, self.max_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.sigma) {
            return Err(TrainError::Config(format!("sigma {} outside [0, 2]", self.sigma)));
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return Err(TrainError::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Independent generator for one (seed, stream) pair, e.g. one training step or one
/// input reaction, so results do not depend on processing order.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

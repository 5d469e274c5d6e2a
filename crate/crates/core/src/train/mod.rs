//! Supervised training: loss, AdamW, learning-rate schedules, gradient
//! accumulation, early stopping and best-checkpoint restore.

pub mod adamw;
pub mod early_stop;
pub mod loss;
pub mod schedule;
mod trainer;

use serde::{Deserialize, Serialize};

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use early_stop::{EarlyStopping, Verdict};
pub use loss::{cross_entropy, cross_entropy_with_grad};
pub use schedule::{lr_at, SchedulerKind};
pub use trainer::{evaluate, train_model, train_on_examples, EvalOutcome, TrainOptions, TrainOutcome, GRAD_CHUNK};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub scheduler: SchedulerKind,
    pub warmup_steps: usize,
    pub seed: u64,
    pub betas: [f64; 2],
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::gated_preset()
    }
}

impl TrainConfig {
    /// POS + TF-IDF concat head: lr 1e-5, batch 16, accumulation 4,
    /// patience 3, linear schedule.
    pub fn concat_preset() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 16,
            grad_accum_steps: 4,
            max_epochs: 100,
            patience: 3,
            weight_decay: 0.01,
            scheduler: SchedulerKind::Linear,
            warmup_steps: 100,
            seed: 42,
            betas: [0.9, 0.999],
            epsilon: 1e-8,
        }
    }

    /// Gated fusion head: lr 1e-5, batch 8, accumulation 2, patience 2,
    /// cosine schedule.
    pub fn gated_preset() -> Self {
        TrainConfig {
            batch_size: 8,
            grad_accum_steps: 2,
            patience: 2,
            scheduler: SchedulerKind::Cosine,
            ..TrainConfig::concat_preset()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.grad_accum_steps > 0
            && self.patience > 0
            && self.weight_decay >= 0.0
            && self.epsilon > 0.0
            && self.betas.iter().all(|b| (0.0..1.0).contains(b));
        if positive {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid training configuration: {self:?}")))
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.betas[0],
            beta2: self.betas[1],
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }

    /// Optimizer steps per epoch for `n` training examples.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size * self.grad_accum_steps)
    }

    pub fn total_steps(&self, n: usize) -> usize {
        self.max_epochs * self.steps_per_epoch(n)
    }

    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        lr_at(self.learning_rate, self.scheduler, self.warmup_steps, total_steps, step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub language: Option<String>,
    /// Digest of the tensors training started from.
    pub initial_checkpoint: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_dev_loss: Option<f64>,
    pub best_dev_macro_f1: Option<f64>,
    /// Digest of the restored best tensors.
    pub best_digest: String,
    pub best_checkpoint: Option<String>,
    pub stopped_early: bool,
}

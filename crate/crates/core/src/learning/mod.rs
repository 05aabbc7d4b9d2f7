//! Multi-agent equilibrium learning: Gaussian actors trained with twin
//! delayed critics, and NashConv exploitability estimates.

pub mod actor;
pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod nashconv;
pub mod policy;
pub mod replay;
pub mod td3;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use nashconv::{best_response_gain, evaluate, nashconv, NashConvReport, TraderGain};
pub use policy::{Acting, PolicySet, PolicyStrategy};
pub use train::{curve_csv, train, train_policies, EpisodeMetrics, TrainOutcome, CURVE_CSV_HEADER};

use crate::crisis::CrisisError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("expected input width {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("{0}")]
    WrongActor(&'static str),
    #[error("non-finite parameter after critic step {step}")]
    NonFinite { step: u64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Crisis(#[from] CrisisError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub batch_size: usize,
    pub l2_penalty: f64,
    pub discount: f64,
    pub target_rate: f64,
    /// Critic steps per actor step.
    pub actor_frequency: usize,
    pub entropy_bonus: f64,
    pub episodes: usize,
    /// Markets between training events; `None` means once per crisis.
    pub train_interval: Option<usize>,
    pub reward_clip: f64,
    pub buffer_capacity: usize,
    /// Transitions a buffer must hold before its traders train.
    pub warmup: usize,
    /// Gradient steps per trader at each training event.
    pub updates_per_train: usize,
    pub nashconv_episodes: usize,
    /// Mean-action rollouts averaged when evaluating a profile.
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            actor_hidden: 32,
            critic_hidden: 256,
            batch_size: 512,
            l2_penalty: 1e-2,
            discount: 0.99,
            target_rate: 0.002,
            actor_frequency: 3,
            entropy_bonus: 3e-3,
            episodes: 3000,
            train_interval: None,
            reward_clip: 1.0,
            buffer_capacity: 100_000,
            warmup: 100,
            updates_per_train: 1,
            nashconv_episodes: 100,
            eval_episodes: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearningError> {
        let fail = |m: &str| Err(LearningError::Config(m.to_string()));
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return fail("learning rates must be non-negative");
        }
        if self.actor_hidden == 0 || self.critic_hidden == 0 || self.batch_size == 0 {
            return fail("hidden sizes and batch size must be positive");
        }
        if self.actor_frequency == 0 || self.buffer_capacity == 0 || self.eval_episodes == 0 {
            return fail("actor frequency, buffer capacity and evaluation episodes must be positive");
        }
        if self.train_interval == Some(0) {
            return fail("train interval must be positive");
        }
        if !(0.0..=1.0).contains(&self.discount) || !(0.0..=1.0).contains(&self.target_rate) {
            return fail("discount and target rate must lie in [0, 1]");
        }
        if !(self.reward_clip > 0.0 && self.l2_penalty >= 0.0 && self.entropy_bonus >= 0.0) {
            return fail("reward clip must be positive, penalties non-negative");
        }
        Ok(())
    }
}

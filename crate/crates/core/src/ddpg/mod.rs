//! Deep deterministic policy gradient: replay buffer, target networks,
//! critic regression and the sampled policy gradient, plus the two
//! training environments.

mod buffer;
mod env;
mod learner;
mod train;

pub use buffer::{sample_minibatch, ReplayBuffer, Transition};
pub use env::{EnvStep, FollowEnv, FreeEnv, TrainingEnv};
pub use learner::{td_targets, Ddpg, StepStats};
pub use train::{
    evaluate_policy, train_policy, train_policy_with, write_reward_curve, EpisodeRecord,
    EvaluationSummary, Trainer, TrainingLog, TrainingOutcome,
};

use serde::{Deserialize, Serialize};

use crate::agent::PolicyKind;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Hyper-parameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgConfig {
    pub lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub tau: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub hidden_free: Vec<usize>,
    pub hidden_follow: Vec<usize>,
    pub optimizer: OptimizerKind,
    /// Length of the trailing window used to rank checkpoints.
    pub monitor_window: usize,
    /// Save a periodic checkpoint every this many episodes (0 = never).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            gamma: 0.95,
            batch_size: 32,
            buffer_capacity: 100_000,
            tau: 0.001,
            ou_theta: 0.15,
            ou_sigma: 0.2,
            episodes: 10_000,
            steps_per_episode: 500,
            hidden_free: vec![16],
            hidden_follow: vec![32, 32],
            optimizer: OptimizerKind::Adam,
            monitor_window: 30,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl DdpgConfig {
    pub fn hidden(&self, kind: PolicyKind) -> &[usize] {
        match kind {
            PolicyKind::Free => &self.hidden_free,
            PolicyKind::Follow => &self.hidden_follow,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("ddpg.lr must be > 0");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("ddpg.gamma must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad("ddpg.batch_size must be in 1..=ddpg.buffer_capacity");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("ddpg.tau must lie in [0, 1]");
        }
        if self.ou_theta < 0.0 || self.ou_sigma < 0.0 {
            return bad("ddpg.ou_theta and ddpg.ou_sigma must be >= 0");
        }
        if self.steps_per_episode == 0 {
            return bad("ddpg.steps_per_episode must be > 0");
        }
        if self.monitor_window == 0 {
            return bad("ddpg.monitor_window must be > 0");
        }
        if self.hidden_free.contains(&0) || self.hidden_follow.contains(&0) {
            return bad("hidden layer widths must be > 0");
        }
        Ok(())
    }
}

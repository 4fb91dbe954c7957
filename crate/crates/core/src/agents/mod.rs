//! Hybrid-action PPO: a categorical agent for channel selection and a
//! Gaussian agent for model scale, power, and trajectory, plus the equal
//! power and three-agent benchmarks.

mod policy;
mod ppo;
mod training;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::nn::NnError;

pub use policy::{
    denormalize, normalize, ContinuousParts, Controller, FixedPolicy, Greedy, HybridPolicy,
    PolicyStep, RandomPolicy, RolloutBuffer, Transition,
};
pub use ppo::{
    clipped_actor_loss, clipped_term, clipped_term_grad, critic_loss, gaussian_log_prob,
    standardize, td_advantage, ActMode, AgentAction, AgentCheckpoint, AgentStats,
    AgentTransition, Decision, Distribution, PolicyKind, PpoAgent, SIGMA_FLOOR,
};
pub(crate) use training::{stream, ACT_STREAM, ENV_STREAM};
pub use training::{
    run_equal_power, run_hybrid, run_triple_ppo, train_policy, TrainOutcome, UpdateStats,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
}

/// Which decision structure is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Channel agent plus one continuous agent for scale, power, trajectory.
    Hybrid,
    /// Like `Hybrid` but every user always transmits at full power.
    Ep,
    /// Channel agent, scale/trajectory agent, and a separate power agent.
    Triple,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Hybrid, Algorithm::Ep, Algorithm::Triple];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Hybrid => "hybrid",
            Algorithm::Ep => "ep",
            Algorithm::Triple => "triple",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hybrid" => Ok(Algorithm::Hybrid),
            "ep" => Ok(Algorithm::Ep),
            "triple" => Ok(Algorithm::Triple),
            other => Err(format!("unknown algorithm {other:?} (expected hybrid, ep, triple)")),
        }
    }
}

/// PPO hyperparameters shared by every sub-agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub discount: f64,
    pub clip_ratio: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    /// Slots collected before an update; episodes are never split.
    pub rollout_slots: usize,
    pub entropy_coef_discrete: f64,
    pub entropy_coef_continuous: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub learning_rate: f64,
    pub hidden_dims: Vec<usize>,
    /// Largest categorical head allowed for the channel agent.
    pub action_space_cap: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            clip_ratio: 0.2,
            epochs_per_update: 4,
            minibatch_size: 64,
            rollout_slots: 2048,
            entropy_coef_discrete: 0.01,
            entropy_coef_continuous: 0.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            learning_rate: 3e-4,
            hidden_dims: vec![64, 64],
            action_space_cap: 65536,
        }
    }
}

impl PpoConfig {
    /// Name and reason of the first out-of-range field.
    pub fn invalid_field(&self) -> Option<(&'static str, &'static str)> {
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Some(("discount", "must lie in (0, 1)"));
        }
        if !(self.clip_ratio > 0.0) {
            return Some(("clip_ratio", "must be positive"));
        }
        if self.epochs_per_update == 0 {
            return Some(("epochs_per_update", "must be at least 1"));
        }
        if self.minibatch_size == 0 {
            return Some(("minibatch_size", "must be at least 1"));
        }
        if self.rollout_slots == 0 {
            return Some(("rollout_slots", "must be at least 1"));
        }
        if !(self.entropy_coef_discrete >= 0.0) {
            return Some(("entropy_coef_discrete", "must be nonnegative"));
        }
        if !(self.entropy_coef_continuous >= 0.0) {
            return Some(("entropy_coef_continuous", "must be nonnegative"));
        }
        if !(self.value_coef > 0.0) {
            return Some(("value_coef", "must be positive"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Some(("max_grad_norm", "must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Some(("learning_rate", "must be positive"));
        }
        if self.hidden_dims.contains(&0) {
            return Some(("hidden_dims", "layers must be non-empty"));
        }
        None
    }
}

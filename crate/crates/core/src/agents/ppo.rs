//! Single PPO sub-agent: an actor with either a categorical or a diagonal
//! Gaussian head, an independent state-value critic, and the clipped
//! surrogate update.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PpoConfig;
use crate::nn::{
    accumulate_gradient, clip_grad_norm, forward, forward_trace, Activation, HeadSpec,
    NetworkCheckpoint, NetworkSpec, NnError, OptimizerState, ParameterSet,
};

/// Lower bound added to the softplus standard-deviation head.
pub const SIGMA_FLOOR: f64 = 1e-3;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Smallest probability fed to `ln`.
const PROB_FLOOR: f64 = f64::MIN_POSITIVE;

/// Log density of `x` under independent normals `N(mu_i, sigma_i^2)`.
pub fn gaussian_log_prob(x: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    x.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&x, &m), &s)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - 0.5 * LN_2PI
        })
        .sum()
}

/// One-step TD targets `r + gamma * V(s') * (1 - done)` and advantages
/// `target - V(s)`, the latter standardized over the batch.
pub fn td_advantage(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    discount: f64,
) -> (Vec<f64>, Vec<f64>) {
    let targets: Vec<f64> = rewards
        .iter()
        .zip(next_values)
        .zip(dones)
        .map(|((&r, &v_next), &done)| if done { r } else { r + discount * v_next })
        .collect();
    let raw: Vec<f64> = targets.iter().zip(values).map(|(t, v)| t - v).collect();
    (standardize(&raw), targets)
}

/// Zero-mean, unit-variance copy. A constant batch maps to zeros.
pub fn standardize(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / std).collect()
}

/// Mean squared error between predicted values and fixed targets.
pub fn critic_loss(values: &[f64], targets: &[f64]) -> f64 {
    values
        .iter()
        .zip(targets)
        .map(|(v, t)| (v - t).powi(2))
        .sum::<f64>()
        / values.len().max(1) as f64
}

/// Per-sample PPO clipped loss `-min(rho * A, clip(rho) * A)`.
pub fn clipped_term(log_prob_new: f64, log_prob_old: f64, advantage: f64, clip: f64) -> f64 {
    let ratio = (log_prob_new - log_prob_old).exp();
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    -(ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_term`] with respect to `log_prob_new`.
pub fn clipped_term_grad(log_prob_new: f64, log_prob_old: f64, advantage: f64, clip: f64) -> f64 {
    let ratio = (log_prob_new - log_prob_old).exp();
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    if ratio * advantage <= clipped * advantage {
        -ratio * advantage
    } else {
        0.0
    }
}

/// Batch mean of the clipped surrogate loss.
pub fn clipped_actor_loss(
    log_prob_new: &[f64],
    log_prob_old: &[f64],
    advantages: &[f64],
    clip: f64,
) -> f64 {
    log_prob_new
        .iter()
        .zip(log_prob_old)
        .zip(advantages)
        .map(|((&new, &old), &a)| clipped_term(new, old, a, clip))
        .sum::<f64>()
        / log_prob_new.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PolicyKind {
    Categorical { actions: usize },
    Gaussian { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    /// Most likely discrete action, Gaussian mean.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AgentAction {
    Index(usize),
    /// Normalized continuous action in `[-1, 1]^d`.
    Vector(Vec<f64>),
}

/// Action distribution produced by an actor for one observation.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Categorical(Vec<f64>),
    Gaussian { mu: Vec<f64>, sigma: Vec<f64> },
}

impl Distribution {
    pub fn log_prob(&self, action: &AgentAction) -> f64 {
        match (self, action) {
            (Distribution::Categorical(p), AgentAction::Index(i)) => p[*i].max(PROB_FLOOR).ln(),
            (Distribution::Gaussian { mu, sigma }, AgentAction::Vector(x)) => {
                gaussian_log_prob(x, mu, sigma)
            }
            _ => panic!("action kind does not match distribution"),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            Distribution::Categorical(p) => -p
                .iter()
                .map(|&q| if q > 0.0 { q * q.ln() } else { 0.0 })
                .sum::<f64>(),
            Distribution::Gaussian { sigma, .. } => sigma
                .iter()
                .map(|s| s.ln() + 0.5 * (LN_2PI + 1.0))
                .sum(),
        }
    }
}

/// What an agent chose for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: AgentAction,
    pub log_prob: f64,
    pub value: f64,
}

/// One agent's view of a slot, as stored for its update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTransition {
    pub obs: Vec<f64>,
    pub action: AgentAction,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub next_value: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// On-disk form of one sub-agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub role: String,
    pub kind: PolicyKind,
    pub entropy_coef: f64,
    pub actor: NetworkCheckpoint,
    pub critic: NetworkCheckpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoAgent {
    role: String,
    kind: PolicyKind,
    entropy_coef: f64,
    actor_spec: NetworkSpec,
    actor: ParameterSet,
    actor_opt: OptimizerState,
    critic_spec: NetworkSpec,
    critic: ParameterSet,
    critic_opt: OptimizerState,
}

impl PpoAgent {
    pub fn new<R: Rng + ?Sized>(
        role: &str,
        kind: PolicyKind,
        obs_dim: usize,
        ppo: &PpoConfig,
        entropy_coef: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let heads = match kind {
            PolicyKind::Categorical { actions } => {
                vec![HeadSpec::new("probs", actions, Activation::Softmax)]
            }
            PolicyKind::Gaussian { dim } => vec![
                HeadSpec::new("mu", dim, Activation::Linear),
                HeadSpec::new("sigma", dim, Activation::Softplus),
            ],
        };
        let actor_spec = NetworkSpec::new(obs_dim, ppo.hidden_dims.clone(), heads)?;
        let critic_spec = NetworkSpec::new(
            obs_dim,
            ppo.hidden_dims.clone(),
            vec![HeadSpec::new("value", 1, Activation::Linear)],
        )?;
        let hidden_gain = 2f64.sqrt();
        let head_gains = vec![0.01; actor_spec.heads.len()];
        let actor = ParameterSet::orthogonal(&actor_spec, hidden_gain, &head_gains, rng);
        let critic = ParameterSet::orthogonal(&critic_spec, hidden_gain, &[1.0], rng);
        Ok(Self {
            role: role.to_string(),
            kind,
            entropy_coef,
            actor_opt: OptimizerState::new(actor.len(), ppo.learning_rate),
            critic_opt: OptimizerState::new(critic.len(), ppo.learning_rate),
            actor_spec,
            actor,
            critic_spec,
            critic,
        })
    }

    pub fn role(&self) -> &str {
        &self.role
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn actor_spec(&self) -> &NetworkSpec {
        &self.actor_spec
    }

    pub fn actor_params(&self) -> &ParameterSet {
        &self.actor
    }

    pub fn actor_params_mut(&mut self) -> &mut ParameterSet {
        &mut self.actor
    }

    pub fn critic_params(&self) -> &ParameterSet {
        &self.critic
    }

    pub fn obs_dim(&self) -> usize {
        self.actor_spec.input_dim
    }

    fn to_distribution(&self, outputs: &[Vec<f64>]) -> Distribution {
        match self.kind {
            PolicyKind::Categorical { .. } => Distribution::Categorical(outputs[0].clone()),
            PolicyKind::Gaussian { .. } => Distribution::Gaussian {
                mu: outputs[0].clone(),
                sigma: outputs[1].iter().map(|s| s + SIGMA_FLOOR).collect(),
            },
        }
    }

    pub fn distribution(&self, obs: &[f64]) -> Result<Distribution, NnError> {
        let out = forward(&self.actor_spec, &self.actor, obs)?;
        Ok(self.to_distribution(&out))
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64, NnError> {
        Ok(forward(&self.critic_spec, &self.critic, obs)?[0][0])
    }

    pub fn log_prob(&self, obs: &[f64], action: &AgentAction) -> Result<f64, NnError> {
        Ok(self.distribution(obs)?.log_prob(action))
    }

    /// Picks an action. Gaussian samples are clamped to `[-1, 1]` and the
    /// recorded log-probability is the Gaussian density at the clamped point.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        mode: ActMode,
        rng: &mut R,
    ) -> Result<Decision, NnError> {
        let dist = self.distribution(obs)?;
        let action = match (&dist, mode) {
            (Distribution::Categorical(p), ActMode::Sample) => {
                AgentAction::Index(sample_categorical(p, rng))
            }
            (Distribution::Categorical(p), ActMode::Mean) => AgentAction::Index(argmax(p)),
            (Distribution::Gaussian { mu, sigma }, ActMode::Sample) => AgentAction::Vector(
                mu.iter()
                    .zip(sigma)
                    .map(|(m, s)| {
                        let eps: f64 = rng.sample(StandardNormal);
                        (m + s * eps).clamp(-1.0, 1.0)
                    })
                    .collect(),
            ),
            (Distribution::Gaussian { mu, .. }, ActMode::Mean) => {
                AgentAction::Vector(mu.iter().map(|m| m.clamp(-1.0, 1.0)).collect())
            }
        };
        Ok(Decision {
            log_prob: dist.log_prob(&action),
            value: self.value(obs)?,
            action,
        })
    }

    /// Loss and parameter gradient of the actor objective
    /// `clipped surrogate - entropy_coef * entropy`, averaged over `batch`.
    pub fn actor_gradient(
        &self,
        batch: &[&AgentTransition],
        advantages: &[f64],
        clip: f64,
    ) -> Result<(f64, Vec<f64>, AgentStats), NnError> {
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut grad = vec![0.0; self.actor.len()];
        let mut stats = AgentStats::default();
        let mut loss = 0.0;
        for (t, &adv) in batch.iter().zip(advantages) {
            let trace = forward_trace(&self.actor_spec, &self.actor, &t.obs)?;
            let dist = self.to_distribution(trace.outputs());
            let lp = dist.log_prob(&t.action);
            let entropy = dist.entropy();
            let ratio = (lp - t.log_prob).exp();
            loss += scale * (clipped_term(lp, t.log_prob, adv, clip) - self.entropy_coef * entropy);
            stats.entropy += scale * entropy;
            stats.approx_kl += scale * (t.log_prob - lp);
            if (ratio - 1.0).abs() > clip {
                stats.clip_fraction += scale;
            }
            let g_lp = scale * clipped_term_grad(lp, t.log_prob, adv, clip);
            let g_ent = -scale * self.entropy_coef;
            let upstream = match (&dist, &t.action) {
                (Distribution::Categorical(p), AgentAction::Index(a)) => {
                    let mut up: Vec<f64> = p
                        .iter()
                        .map(|&q| g_ent * -(q.max(PROB_FLOOR).ln() + 1.0))
                        .collect();
                    up[*a] += g_lp / p[*a].max(PROB_FLOOR);
                    vec![up]
                }
                (Distribution::Gaussian { mu, sigma }, AgentAction::Vector(x)) => {
                    let mut d_mu = Vec::with_capacity(mu.len());
                    let mut d_sigma = Vec::with_capacity(mu.len());
                    for ((&x, &m), &s) in x.iter().zip(mu).zip(sigma) {
                        let z = (x - m) / s;
                        d_mu.push(g_lp * z / s);
                        d_sigma.push(g_lp * (z * z - 1.0) / s + g_ent / s);
                    }
                    vec![d_mu, d_sigma]
                }
                _ => {
                    return Err(NnError::InvalidSpec(format!(
                        "agent {} received a mismatched action",
                        self.role
                    )))
                }
            };
            accumulate_gradient(&self.actor_spec, &self.actor, &trace, &upstream, &mut grad)?;
        }
        stats.actor_loss = loss;
        Ok((loss, grad, stats))
    }

    /// Loss and gradient of `value_coef * mean (V(s) - target)^2`.
    pub fn critic_gradient(
        &self,
        batch: &[&AgentTransition],
        targets: &[f64],
        value_coef: f64,
    ) -> Result<(f64, Vec<f64>), NnError> {
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut grad = vec![0.0; self.critic.len()];
        let mut loss = 0.0;
        for (t, &target) in batch.iter().zip(targets) {
            let trace = forward_trace(&self.critic_spec, &self.critic, &t.obs)?;
            let v = trace.outputs()[0][0];
            loss += scale * (v - target).powi(2);
            let up = vec![vec![value_coef * scale * 2.0 * (v - target)]];
            accumulate_gradient(&self.critic_spec, &self.critic, &trace, &up, &mut grad)?;
        }
        Ok((loss, grad))
    }

    /// Runs the configured epochs of minibatched PPO updates on `batch`.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &[AgentTransition],
        ppo: &PpoConfig,
        rng: &mut R,
    ) -> Result<AgentStats, NnError> {
        if batch.is_empty() {
            return Ok(AgentStats::default());
        }
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = batch.iter().map(|t| t.value).collect();
        let next_values: Vec<f64> = batch.iter().map(|t| t.next_value).collect();
        let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
        let (advantages, targets) =
            td_advantage(&rewards, &values, &next_values, &dones, ppo.discount);

        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mb = ppo.minibatch_size.max(1);
        let mut totals = AgentStats::default();
        let mut count = 0.0;
        for _ in 0..ppo.epochs_per_update {
            order.shuffle(rng);
            for chunk in order.chunks(mb) {
                let items: Vec<&AgentTransition> = chunk.iter().map(|&i| &batch[i]).collect();
                let adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
                let tgt: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();

                let (_, mut g_actor, stats) = self.actor_gradient(&items, &adv, ppo.clip_ratio)?;
                clip_grad_norm(&mut g_actor, ppo.max_grad_norm);
                self.actor_opt.apply(&mut self.actor, &g_actor)?;

                let (c_loss, mut g_critic) = self.critic_gradient(&items, &tgt, ppo.value_coef)?;
                clip_grad_norm(&mut g_critic, ppo.max_grad_norm);
                self.critic_opt.apply(&mut self.critic, &g_critic)?;

                totals.actor_loss += stats.actor_loss;
                totals.entropy += stats.entropy;
                totals.approx_kl += stats.approx_kl;
                totals.clip_fraction += stats.clip_fraction;
                totals.critic_loss += c_loss;
                count += 1.0;
            }
        }
        Ok(AgentStats {
            actor_loss: totals.actor_loss / count,
            critic_loss: totals.critic_loss / count,
            entropy: totals.entropy / count,
            approx_kl: totals.approx_kl / count,
            clip_fraction: totals.clip_fraction / count,
        })
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            role: self.role.clone(),
            kind: self.kind,
            entropy_coef: self.entropy_coef,
            actor: NetworkCheckpoint {
                spec: self.actor_spec.clone(),
                params: self.actor.clone(),
                optimizer: self.actor_opt.clone(),
            },
            critic: NetworkCheckpoint {
                spec: self.critic_spec.clone(),
                params: self.critic.clone(),
                optimizer: self.critic_opt.clone(),
            },
        }
    }

    pub fn from_checkpoint(ckpt: AgentCheckpoint) -> Result<Self, NnError> {
        ckpt.actor.validate()?;
        ckpt.critic.validate()?;
        let expected_heads = match ckpt.kind {
            PolicyKind::Categorical { actions } => vec![(actions, Activation::Softmax)],
            PolicyKind::Gaussian { dim } => {
                vec![(dim, Activation::Linear), (dim, Activation::Softplus)]
            }
        };
        let heads: Vec<(usize, Activation)> = ckpt
            .actor
            .spec
            .heads
            .iter()
            .map(|h| (h.dim, h.activation))
            .collect();
        if heads != expected_heads {
            return Err(NnError::InvalidSpec(format!(
                "actor heads of {} do not match its policy kind",
                ckpt.role
            )));
        }
        Ok(Self {
            role: ckpt.role,
            kind: ckpt.kind,
            entropy_coef: ckpt.entropy_coef,
            actor_spec: ckpt.actor.spec,
            actor: ckpt.actor.params,
            actor_opt: ckpt.actor.optimizer,
            critic_spec: ckpt.critic.spec,
            critic: ckpt.critic.params,
            critic_opt: ckpt.critic.optimizer,
        })
    }
}

fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the cumulative sum; take the last supported action.
    p.iter().rposition(|&q| q > 0.0).unwrap_or(p.len() - 1)
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &q)| if q > best.1 { (i, q) } else { best })
        .0
}

//! On-policy training loop shared by all three algorithms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{HybridPolicy, RolloutBuffer, Transition};
use super::ppo::{ActMode, AgentStats};
use super::{AgentError, Algorithm, PpoConfig};
use crate::env::{reset, step, EnvConfig};
use crate::rollout::{EpisodeAccumulator, EpisodeRecord};

/// ChaCha stream ids of the random sources used during training.
pub(crate) const ENV_STREAM: u64 = 1;
pub(crate) const ACT_STREAM: u64 = 2;
pub(crate) const UPDATE_STREAM: u64 = 3;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub slots: usize,
    pub discrete: AgentStats,
    pub continuous: AgentStats,
    pub power: Option<AgentStats>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: HybridPolicy,
    pub records: Vec<EpisodeRecord>,
    pub updates: Vec<UpdateStats>,
}

/// Trains `policy` for `episodes` episodes, calling `on_episode` after each.
///
/// Slots accumulate until at least `rollout_slots` are buffered at an
/// episode boundary, then every trainable sub-agent takes one PPO update.
pub fn train_policy<F, E>(
    mut policy: HybridPolicy,
    env: &EnvConfig,
    ppo: &PpoConfig,
    episodes: usize,
    seed: u64,
    mut on_episode: F,
) -> Result<TrainOutcome, E>
where
    F: FnMut(&EpisodeRecord, &HybridPolicy) -> Result<(), E>,
    E: From<AgentError>,
{
    let mut env_rng = stream(seed, ENV_STREAM);
    let mut act_rng = stream(seed, ACT_STREAM);
    let mut update_rng = stream(seed, UPDATE_STREAM);
    let mut buffer = RolloutBuffer::new();
    let mut records = Vec::with_capacity(episodes);
    let mut updates = Vec::new();

    for episode in 0..episodes {
        let mut state = reset(env, &mut env_rng).map_err(AgentError::from)?;
        let mut acc = EpisodeAccumulator::default();
        loop {
            let (action, decision) = policy.act(&state, env, ActMode::Sample, &mut act_rng)?;
            let out = step(&state, &action, env, &mut env_rng).map_err(AgentError::from)?;
            acc.add(&action, &out);
            buffer.push(Transition {
                step: decision,
                reward_d: out.reward_discrete,
                reward_c: out.reward_continuous,
                done: out.done,
            });
            state = out.next_state;
            if out.done {
                break;
            }
        }
        buffer.finish_episode();
        if buffer.len() >= ppo.rollout_slots {
            updates.push(policy.update(&buffer, ppo, &mut update_rng)?);
            buffer.clear();
        }
        let record = acc.finish(episode, &state, env);
        on_episode(&record, &policy)?;
        records.push(record);
    }
    Ok(TrainOutcome {
        policy,
        records,
        updates,
    })
}

fn run(
    algorithm: Algorithm,
    env: &EnvConfig,
    ppo: &PpoConfig,
    episodes: usize,
    seed: u64,
) -> Result<TrainOutcome, AgentError> {
    let policy = HybridPolicy::new(algorithm, env, ppo, seed)?;
    train_policy(policy, env, ppo, episodes, seed, |_, _| Ok::<(), AgentError>(()))
}

/// Two cooperating agents: channels, then scale/power/trajectory.
pub fn run_hybrid(
    env: &EnvConfig,
    ppo: &PpoConfig,
    episodes: usize,
    seed: u64,
) -> Result<TrainOutcome, AgentError> {
    run(Algorithm::Hybrid, env, ppo, episodes, seed)
}

/// Hybrid structure with all users pinned to full power.
pub fn run_equal_power(
    env: &EnvConfig,
    ppo: &PpoConfig,
    episodes: usize,
    seed: u64,
) -> Result<TrainOutcome, AgentError> {
    run(Algorithm::Ep, env, ppo, episodes, seed)
}

/// Power control split off into a third agent.
pub fn run_triple_ppo(
    env: &EnvConfig,
    ppo: &PpoConfig,
    episodes: usize,
    seed: u64,
) -> Result<TrainOutcome, AgentError> {
    run(Algorithm::Triple, env, ppo, episodes, seed)
}

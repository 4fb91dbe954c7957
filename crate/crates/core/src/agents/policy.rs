//! Composition of sub-agents into a joint hybrid action, the rollout
//! buffer that splits each slot back into per-agent transitions, and the
//! non-learning controllers used as baselines.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{ActMode, AgentAction, AgentCheckpoint, AgentTransition, Decision, PolicyKind, PpoAgent};
use super::training::UpdateStats;
use super::{AgentError, Algorithm, PpoConfig};
use crate::channel::ChannelAssignment;
use crate::env::{
    continuous_obs_dim, decode_discrete, discrete_action_count, discrete_obs_dim,
    observe_continuous, observe_discrete, EnvConfig, EnvError, HybridAction, MissionState,
};
use crate::semantic::ETA_MIN;

/// Physical values of the continuous part of a hybrid action.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousParts {
    pub etas: Vec<f64>,
    pub powers: Vec<f64>,
    pub delta_xy: (f64, f64),
}

fn from_unit(raw: f64, lo: f64, hi: f64) -> f64 {
    lo + (raw.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo)
}

fn to_unit(value: f64, lo: f64, hi: f64) -> f64 {
    2.0 * (value - lo) / (hi - lo) - 1.0
}

/// Maps a normalized `[etas (N), powers (N), dx, dy]` vector in `[-1, 1]`
/// onto physical ranges.
pub fn denormalize(raw: &[f64], config: &EnvConfig) -> Result<ContinuousParts, EnvError> {
    let n = config.num_users();
    if raw.len() != 2 * n + 2 {
        return Err(EnvError::Dimension(format!(
            "continuous action has {} entries, expected {}",
            raw.len(),
            2 * n + 2
        )));
    }
    let v = config.max_displacement();
    Ok(ContinuousParts {
        etas: raw[..n].iter().map(|&r| from_unit(r, ETA_MIN, 1.0)).collect(),
        powers: raw[n..2 * n]
            .iter()
            .map(|&r| from_unit(r, 0.0, config.max_power))
            .collect(),
        delta_xy: (from_unit(raw[2 * n], -v, v), from_unit(raw[2 * n + 1], -v, v)),
    })
}

/// Inverse of [`denormalize`] for in-range values.
pub fn normalize(parts: &ContinuousParts, config: &EnvConfig) -> Vec<f64> {
    let v = config.max_displacement();
    parts
        .etas
        .iter()
        .map(|&e| to_unit(e, ETA_MIN, 1.0))
        .chain(parts.powers.iter().map(|&p| to_unit(p, 0.0, config.max_power)))
        .chain([to_unit(parts.delta_xy.0, -v, v), to_unit(parts.delta_xy.1, -v, v)])
        .collect()
}

/// Anything that can drive the environment for one slot.
pub trait Controller {
    fn decide(
        &mut self,
        state: &MissionState,
        config: &EnvConfig,
        rng: &mut dyn RngCore,
    ) -> Result<HybridAction, AgentError>;
}

/// Uniformly random hybrid actions over the full action space.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Controller for RandomPolicy {
    fn decide(
        &mut self,
        _state: &MissionState,
        config: &EnvConfig,
        rng: &mut dyn RngCore,
    ) -> Result<HybridAction, AgentError> {
        let n = config.num_users();
        let m = config.num_channels();
        let choices = (0..n).map(|_| rng.random_range(0..=m)).collect();
        let raw: Vec<f64> = (0..2 * n + 2).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let parts = denormalize(&raw, config)?;
        Ok(HybridAction {
            assignment: ChannelAssignment::new(choices, m).map_err(EnvError::from)?,
            powers: parts.powers,
            etas: parts.etas,
            delta_xy: parts.delta_xy,
        })
    }
}

/// Replays one action every slot.
#[derive(Debug, Clone)]
pub struct FixedPolicy {
    pub action: HybridAction,
}

impl FixedPolicy {
    /// Users spread round-robin over channels at full power and a fixed
    /// model scale, UAV hovering.
    pub fn round_robin(config: &EnvConfig, eta: f64) -> Self {
        let n = config.num_users();
        let m = config.num_channels();
        Self {
            action: HybridAction {
                assignment: ChannelAssignment::new((0..n).map(|i| i % m + 1).collect(), m)
                    .expect("round robin stays within channel count"),
                powers: vec![config.max_power; n],
                etas: vec![eta; n],
                delta_xy: (0.0, 0.0),
            },
        }
    }
}

impl Controller for FixedPolicy {
    fn decide(
        &mut self,
        _state: &MissionState,
        _config: &EnvConfig,
        _rng: &mut dyn RngCore,
    ) -> Result<HybridAction, AgentError> {
        Ok(self.action.clone())
    }
}

/// Observations and sub-agent decisions behind one joint action.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    pub obs_d: Vec<f64>,
    pub obs_c: Vec<f64>,
    pub discrete: Decision,
    pub continuous: Decision,
    /// Power agent decision (three-agent benchmark only).
    pub power: Option<Decision>,
}

/// A slot as experienced by the learners.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub step: PolicyStep,
    pub reward_d: f64,
    pub reward_c: f64,
    pub done: bool,
}

/// Per-agent transition lists for the slots collected since the last update.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub discrete: Vec<AgentTransition>,
    pub continuous: Vec<AgentTransition>,
    pub power: Vec<AgentTransition>,
    episode_start: usize,
}

impl RolloutBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.discrete.len()
    }

    pub fn is_empty(&self) -> bool {
        self.discrete.is_empty()
    }

    /// Records one slot. The channel agent learns from the discrete reward,
    /// both continuous agents from the continuous reward.
    pub fn push(&mut self, t: Transition) {
        let record = |obs: &[f64], d: Decision, reward: f64| AgentTransition {
            obs: obs.to_vec(),
            action: d.action,
            log_prob: d.log_prob,
            value: d.value,
            reward,
            next_value: 0.0,
            done: t.done,
        };
        self.discrete.push(record(&t.step.obs_d, t.step.discrete, t.reward_d));
        self.continuous.push(record(&t.step.obs_c, t.step.continuous, t.reward_c));
        if let Some(p) = t.step.power {
            self.power.push(record(&t.step.obs_c, p, t.reward_c));
        }
    }

    /// Links each slot of the current episode to the value of its successor.
    pub fn finish_episode(&mut self) {
        let start = self.episode_start;
        for list in [&mut self.discrete, &mut self.continuous, &mut self.power] {
            if list.len() <= start {
                continue;
            }
            for i in start..list.len() - 1 {
                list[i].next_value = list[i + 1].value;
            }
        }
        self.episode_start = self.discrete.len();
    }

    pub fn clear(&mut self) {
        self.discrete.clear();
        self.continuous.clear();
        self.power.clear();
        self.episode_start = 0;
    }
}

const ROLE_DISCRETE: &str = "discrete";
const ROLE_CONTINUOUS: &str = "continuous";
const ROLE_POWER: &str = "power";

/// ChaCha stream offsets so every sub-agent initializes from its own
/// stream regardless of which other agents exist.
const INIT_STREAM_BASE: u64 = 16;

fn init_rng(seed: u64, role_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM_BASE + role_index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    algorithm: Algorithm,
    num_users: usize,
    num_channels: usize,
    power_pinned: bool,
    agents: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    role: String,
    file: String,
}

/// The cooperating sub-agents of one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridPolicy {
    algorithm: Algorithm,
    num_users: usize,
    num_channels: usize,
    power_pinned: bool,
    discrete: PpoAgent,
    continuous: PpoAgent,
    power: Option<PpoAgent>,
}

impl HybridPolicy {
    pub fn new(
        algorithm: Algorithm,
        env: &EnvConfig,
        ppo: &PpoConfig,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let n = env.num_users();
        let m = env.num_channels();
        let actions = discrete_action_count(n, m, ppo.action_space_cap)?;
        let discrete = PpoAgent::new(
            ROLE_DISCRETE,
            PolicyKind::Categorical { actions },
            discrete_obs_dim(env),
            ppo,
            ppo.entropy_coef_discrete,
            &mut init_rng(seed, 0),
        )?;
        let continuous_dim = match algorithm {
            Algorithm::Hybrid => 2 * n + 2,
            Algorithm::Ep | Algorithm::Triple => n + 2,
        };
        let continuous = PpoAgent::new(
            ROLE_CONTINUOUS,
            PolicyKind::Gaussian { dim: continuous_dim },
            continuous_obs_dim(env),
            ppo,
            ppo.entropy_coef_continuous,
            &mut init_rng(seed, 1),
        )?;
        let power = match algorithm {
            Algorithm::Triple => Some(PpoAgent::new(
                ROLE_POWER,
                PolicyKind::Gaussian { dim: n },
                continuous_obs_dim(env),
                ppo,
                ppo.entropy_coef_continuous,
                &mut init_rng(seed, 2),
            )?),
            _ => None,
        };
        Ok(Self {
            algorithm,
            num_users: n,
            num_channels: m,
            power_pinned: false,
            discrete,
            continuous,
            power,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn agents(&self) -> Vec<&PpoAgent> {
        let mut agents = vec![&self.discrete, &self.continuous];
        agents.extend(self.power.as_ref());
        agents
    }

    pub fn agent_count(&self) -> usize {
        self.agents().len()
    }

    pub fn discrete_agent(&self) -> &PpoAgent {
        &self.discrete
    }

    pub fn continuous_agent(&self) -> &PpoAgent {
        &self.continuous
    }

    pub fn power_agent(&self) -> Option<&PpoAgent> {
        self.power.as_ref()
    }

    /// Freezes the power agent of the three-agent benchmark at full power:
    /// it is neither sampled nor trained afterwards.
    pub fn pin_power(&mut self) {
        if self.power.is_some() {
            self.power_pinned = true;
        }
    }

    pub fn is_power_pinned(&self) -> bool {
        self.power_pinned
    }

    fn check_env(&self, env: &EnvConfig) -> Result<(), AgentError> {
        if env.num_users() != self.num_users || env.num_channels() != self.num_channels {
            return Err(AgentError::Mismatch(format!(
                "policy built for N={}, M={} but environment has N={}, M={}",
                self.num_users,
                self.num_channels,
                env.num_users(),
                env.num_channels()
            )));
        }
        Ok(())
    }

    /// Queries every sub-agent and assembles the joint action.
    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &MissionState,
        env: &EnvConfig,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<(HybridAction, PolicyStep), AgentError> {
        self.check_env(env)?;
        let n = self.num_users;
        let obs_d = observe_discrete(state, env);
        let obs_c = observe_continuous(state, env);
        let discrete = self.discrete.act(&obs_d, mode, rng)?;
        let continuous = self.continuous.act(&obs_c, mode, rng)?;
        let power = match (&self.power, self.power_pinned) {
            (Some(agent), false) => Some(agent.act(&obs_c, mode, rng)?),
            _ => None,
        };

        let index = match discrete.action {
            AgentAction::Index(i) => i,
            AgentAction::Vector(_) => unreachable!("categorical agent returns an index"),
        };
        let assignment = decode_discrete(index, n, self.num_channels)?;
        let c_raw = match &continuous.action {
            AgentAction::Vector(v) => v,
            AgentAction::Index(_) => unreachable!("gaussian agent returns a vector"),
        };

        // Rebuild the full [etas, powers, dx, dy] layout.
        let mut raw = Vec::with_capacity(2 * n + 2);
        raw.extend_from_slice(&c_raw[..n]);
        match (self.algorithm, &power) {
            (Algorithm::Hybrid, _) => raw.extend_from_slice(&c_raw[n..2 * n]),
            (_, Some(Decision { action: AgentAction::Vector(p), .. })) => raw.extend_from_slice(p),
            _ => raw.extend(std::iter::repeat_n(1.0, n)),
        }
        raw.extend_from_slice(&c_raw[c_raw.len() - 2..]);
        let parts = denormalize(&raw, env)?;
        let action = HybridAction {
            assignment,
            powers: parts.powers,
            etas: parts.etas,
            delta_xy: parts.delta_xy,
        };
        Ok((
            action,
            PolicyStep {
                obs_d,
                obs_c,
                discrete,
                continuous,
                power,
            },
        ))
    }

    /// One PPO update of every trainable sub-agent on its own transitions.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        buffer: &RolloutBuffer,
        ppo: &PpoConfig,
        rng: &mut R,
    ) -> Result<UpdateStats, AgentError> {
        let discrete = self.discrete.update(&buffer.discrete, ppo, rng)?;
        let continuous = self.continuous.update(&buffer.continuous, ppo, rng)?;
        let power = match (&mut self.power, self.power_pinned) {
            (Some(agent), false) => Some(agent.update(&buffer.power, ppo, rng)?),
            _ => None,
        };
        Ok(UpdateStats {
            slots: buffer.len(),
            discrete,
            continuous,
            power,
        })
    }

    /// Writes one JSON file per sub-agent plus `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), AgentError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| AgentError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut entries = Vec::new();
        for agent in self.agents() {
            let file = format!("{}.json", agent.role());
            let path = dir.join(&file);
            let text = serde_json::to_string_pretty(&agent.checkpoint()).expect("checkpoint serializes");
            fs::write(&path, text).map_err(io(&path))?;
            entries.push(ManifestEntry {
                role: agent.role().to_string(),
                file,
            });
        }
        let manifest = Manifest {
            algorithm: self.algorithm,
            num_users: self.num_users,
            num_channels: self.num_channels,
            power_pinned: self.power_pinned,
            agents: entries,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(io(&path))
    }

    /// Restores a policy saved by [`HybridPolicy::save`].
    pub fn load(dir: &Path) -> Result<Self, AgentError> {
        fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, AgentError> {
            let text = fs::read_to_string(path).map_err(|source| AgentError::Io {
                path: path.display().to_string(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|source| AgentError::Json {
                path: path.display().to_string(),
                source,
            })
        }
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        let load_role = |role: &str| -> Result<Option<PpoAgent>, AgentError> {
            match manifest.agents.iter().find(|e| e.role == role) {
                Some(entry) => {
                    let ckpt: AgentCheckpoint = read_json(&dir.join(&entry.file))?;
                    if ckpt.role != role {
                        return Err(AgentError::Mismatch(format!(
                            "{} holds role {}, manifest says {role}",
                            entry.file, ckpt.role
                        )));
                    }
                    Ok(Some(PpoAgent::from_checkpoint(ckpt)?))
                }
                None => Ok(None),
            }
        };
        let missing = |role: &str| AgentError::Mismatch(format!("manifest lacks a {role} agent"));
        let discrete = load_role(ROLE_DISCRETE)?.ok_or_else(|| missing(ROLE_DISCRETE))?;
        let continuous = load_role(ROLE_CONTINUOUS)?.ok_or_else(|| missing(ROLE_CONTINUOUS))?;
        let power = load_role(ROLE_POWER)?;

        let n = manifest.num_users;
        let expected_c = match manifest.algorithm {
            Algorithm::Hybrid => 2 * n + 2,
            _ => n + 2,
        };
        if continuous.kind() != (PolicyKind::Gaussian { dim: expected_c })
            || (manifest.algorithm == Algorithm::Triple) != power.is_some()
        {
            return Err(AgentError::Mismatch(format!(
                "sub-agent shapes do not match algorithm {}",
                manifest.algorithm
            )));
        }
        Ok(Self {
            algorithm: manifest.algorithm,
            num_users: n,
            num_channels: manifest.num_channels,
            power_pinned: manifest.power_pinned,
            discrete,
            continuous,
            power,
        })
    }
}

/// Deterministic evaluation wrapper: most likely channel choice and the
/// clamped Gaussian means.
#[derive(Debug, Clone, Copy)]
pub struct Greedy<'a>(pub &'a HybridPolicy);

impl Controller for Greedy<'_> {
    fn decide(
        &mut self,
        state: &MissionState,
        config: &EnvConfig,
        rng: &mut dyn RngCore,
    ) -> Result<HybridAction, AgentError> {
        Ok(self.0.act(state, config, ActMode::Mean, rng)?.0)
    }
}

impl Controller for HybridPolicy {
    fn decide(
        &mut self,
        state: &MissionState,
        config: &EnvConfig,
        rng: &mut dyn RngCore,
    ) -> Result<HybridAction, AgentError> {
        Ok(self.act(state, config, ActMode::Sample, rng)?.0)
    }
}

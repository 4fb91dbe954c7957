//! Data-collection mission environment.
//!
//! One episode is a single UAV hovering over `N` ground users in an `L x L`
//! area. Each slot the agents pick a channel assignment, transmit powers,
//! per-user model scales, and a UAV displacement. The environment moves the
//! UAV, draws a fresh channel, drains each user's backlog by the achieved
//! rate, and scores the slot.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    all_rates, realize_channel, ChannelAssignment, ChannelError, ChannelParams,
    ChannelRealization, Position3D,
};
use crate::semantic::{
    energy, quality, EnergyParams, QualityParams, SemanticError, UtilityWeights, ETA_MIN,
};

/// Slack for floating-point comparisons on action bounds.
const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("illegal action: {0}")]
    IllegalAction(String),
    #[error("discrete index {index} outside action space of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("action space (M+1)^N = {channels_plus_one}^{users} exceeds cap {cap}")]
    ActionSpaceTooLarge {
        channels_plus_one: usize,
        users: usize,
        cap: usize,
    },
    #[error("invalid {field}: {reason}")]
    InvalidField { field: String, reason: String },
}

/// Where users are placed at the start of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UserPlacement {
    /// Independent uniform draws over the mission area, every episode.
    Uniform,
    /// The same ground positions every episode.
    Fixed { positions: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Side length of the square mission area in meters.
    pub area_size: f64,
    pub uav_height: f64,
    pub slot_seconds: f64,
    pub max_speed: f64,
    pub max_power: f64,
    /// Backlog per user in bits.
    pub data_size_bits: f64,
    /// Mission deadline in seconds; exceeding it fails the episode.
    pub max_time_s: f64,
    pub time_penalty: f64,
    pub fail_penalty: f64,
    pub bounds_penalty: f64,
    /// Grant utility once per user at completion instead of every slot.
    pub utility_on_completion: bool,
    #[serde(flatten)]
    pub channel: ChannelParams,
    pub quality: QualityParams,
    pub energy: EnergyParams,
    pub weights: UtilityWeights,
    pub user_placement: UserPlacement,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            area_size: 200.0,
            uav_height: 100.0,
            slot_seconds: 1.0,
            max_speed: 10.0,
            max_power: 5.0,
            data_size_bits: 100e6,
            max_time_s: 100.0,
            time_penalty: -1.0,
            fail_penalty: -100.0,
            bounds_penalty: -100.0,
            utility_on_completion: false,
            channel: ChannelParams::default(),
            quality: QualityParams::default(),
            energy: EnergyParams::default(),
            weights: UtilityWeights::default(),
            user_placement: UserPlacement::Uniform,
        }
    }
}

impl EnvConfig {
    pub fn num_users(&self) -> usize {
        self.channel.num_users
    }

    pub fn num_channels(&self) -> usize {
        self.channel.num_channels
    }

    /// Largest per-axis displacement in one slot.
    pub fn max_displacement(&self) -> f64 {
        self.slot_seconds * self.max_speed
    }

    /// Number of slots allowed before the mission counts as failed.
    pub fn max_slots(&self) -> usize {
        (self.max_time_s / self.slot_seconds + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let invalid = |field: &str, reason: &str| {
            Err(EnvError::InvalidField {
                field: field.to_string(),
                reason: reason.to_string(),
            })
        };
        let positive = [
            ("area_size", self.area_size),
            ("uav_height", self.uav_height),
            ("slot_seconds", self.slot_seconds),
            ("max_speed", self.max_speed),
            ("max_power", self.max_power),
            ("data_size_bits", self.data_size_bits),
            ("max_time_s", self.max_time_s),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(field, "must be positive");
            }
        }
        if self.uav_height < 1.0 {
            return invalid("uav_height", "must be at least the 1 m reference distance");
        }
        if self.max_slots() == 0 {
            return invalid("max_time_s", "must allow at least one slot");
        }
        for (field, v) in [
            ("time_penalty", self.time_penalty),
            ("fail_penalty", self.fail_penalty),
            ("bounds_penalty", self.bounds_penalty),
        ] {
            if !(v <= 0.0) {
                return invalid(field, "must be nonpositive");
            }
        }
        if let Some((field, reason)) = self.channel.invalid_field() {
            return invalid(field, reason);
        }
        if !self.quality.is_valid() {
            return invalid("quality", "log argument must stay positive on the scale range");
        }
        if let Some(field) = self.energy.invalid_field() {
            return invalid(&format!("energy.{field}"), "must be positive");
        }
        if !(0.0..=1.0).contains(&self.weights.lambda) {
            return invalid("weights.lambda", "must lie in [0, 1]");
        }
        if !(self.weights.energy_norm > 0.0) {
            return invalid("weights.energy_norm", "must be positive");
        }
        if let UserPlacement::Fixed { positions } = &self.user_placement {
            if positions.len() != self.num_users() {
                return invalid("user_placement", "needs one position per user");
            }
            let l = self.area_size;
            if positions
                .iter()
                .any(|p| !(0.0..=l).contains(&p[0]) || !(0.0..=l).contains(&p[1]))
            {
                return invalid("user_placement", "positions must lie inside the area");
            }
        }
        Ok(())
    }
}

/// Everything the agents can observe, plus the ground truth user layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionState {
    pub users: Vec<Position3D>,
    /// Bits still to deliver, per user.
    pub remaining: Vec<f64>,
    pub uav_xy: (f64, f64),
    pub realization: ChannelRealization,
    pub slot: usize,
}

impl MissionState {
    pub fn is_complete(&self) -> bool {
        self.remaining.iter().all(|&r| r <= 0.0)
    }

    pub fn active_users(&self) -> Vec<usize> {
        (0..self.remaining.len())
            .filter(|&n| self.remaining[n] > 0.0)
            .collect()
    }

    pub fn uav_position(&self, height: f64) -> Position3D {
        Position3D::new(self.uav_xy.0, self.uav_xy.1, height)
    }
}

/// Joint decision for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridAction {
    pub assignment: ChannelAssignment,
    pub powers: Vec<f64>,
    pub etas: Vec<f64>,
    pub delta_xy: (f64, f64),
}

impl HybridAction {
    /// Checks power, scale, and speed limits against `config`.
    pub fn check(&self, config: &EnvConfig) -> Result<(), EnvError> {
        let n = config.num_users();
        if self.assignment.len() != n || self.powers.len() != n || self.etas.len() != n {
            return Err(EnvError::Dimension(format!(
                "action sized for {}/{}/{} users, env has {n}",
                self.assignment.len(),
                self.powers.len(),
                self.etas.len()
            )));
        }
        if let Some(&c) = self
            .assignment
            .choices()
            .iter()
            .find(|&&c| c > config.num_channels())
        {
            return Err(EnvError::IllegalAction(format!("channel choice {c}")));
        }
        if let Some(p) = self
            .powers
            .iter()
            .find(|&&p| !(p >= -BOUND_TOL && p <= config.max_power + BOUND_TOL))
        {
            return Err(EnvError::IllegalAction(format!("power {p} W")));
        }
        if let Some(e) = self
            .etas
            .iter()
            .find(|&&e| !(e >= ETA_MIN - BOUND_TOL && e <= 1.0 + BOUND_TOL))
        {
            return Err(EnvError::IllegalAction(format!("model scale {e}")));
        }
        let vmax = config.max_displacement() + BOUND_TOL;
        let (dx, dy) = self.delta_xy;
        if !(dx.abs() <= vmax && dy.abs() <= vmax) {
            return Err(EnvError::IllegalAction(format!("displacement ({dx}, {dy})")));
        }
        Ok(())
    }
}

/// Per-slot bookkeeping returned alongside the rewards.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub rates_bps: Vec<f64>,
    pub delivered_bits: Vec<f64>,
    /// Users that were still transmitting at the start of the slot.
    pub active: Vec<usize>,
    pub utility: f64,
    pub quality_sum: f64,
    pub energy_sum_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: MissionState,
    pub reward_discrete: f64,
    pub reward_continuous: f64,
    pub done: bool,
    pub failed: bool,
    pub out_of_bounds: bool,
    pub diagnostics: StepDiagnostics,
}

/// Rewards for one slot and the utility terms behind them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub discrete: f64,
    pub continuous: f64,
    pub utility: f64,
    pub quality_sum: f64,
    pub energy_sum_j: f64,
}

fn place_users<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Vec<Position3D> {
    match &config.user_placement {
        UserPlacement::Uniform => (0..config.num_users())
            .map(|_| {
                let x = rng.random::<f64>() * config.area_size;
                let y = rng.random::<f64>() * config.area_size;
                Position3D::ground(x, y)
            })
            .collect(),
        UserPlacement::Fixed { positions } => positions
            .iter()
            .map(|p| Position3D::ground(p[0], p[1]))
            .collect(),
    }
}

/// Starts an episode: full backlogs, UAV over the area center.
pub fn reset<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Result<MissionState, EnvError> {
    let users = place_users(config, rng);
    let center = config.area_size / 2.0;
    let uav = Position3D::new(center, center, config.uav_height);
    let realization = realize_channel(&users, uav, &config.channel, rng)?;
    Ok(MissionState {
        remaining: vec![config.data_size_bits; users.len()],
        users,
        uav_xy: (center, center),
        realization,
        slot: 0,
    })
}

/// Assembles both agents' rewards for one slot.
///
/// `utility_users` are the users whose model scale earns utility this slot.
pub fn reward_components(
    etas: &[f64],
    utility_users: &[usize],
    failed: bool,
    out_of_bounds: bool,
    config: &EnvConfig,
) -> Result<RewardBreakdown, EnvError> {
    let mut quality_sum = 0.0;
    let mut energy_sum_j = 0.0;
    for &n in utility_users {
        let eta = *etas
            .get(n)
            .ok_or_else(|| EnvError::Dimension(format!("no scale for user {n}")))?;
        quality_sum += quality(eta, &config.quality)?;
        energy_sum_j += energy(eta, &config.energy)?;
    }
    let w = &config.weights;
    let utility = w.lambda * quality_sum - (1.0 - w.lambda) * energy_sum_j / w.energy_norm;
    let mut discrete = config.time_penalty + utility;
    if failed {
        discrete += config.fail_penalty;
    }
    let mut continuous = discrete;
    if out_of_bounds {
        continuous += config.bounds_penalty;
    }
    Ok(RewardBreakdown {
        discrete,
        continuous,
        utility,
        quality_sum,
        energy_sum_j,
    })
}

/// Advances the mission by one slot.
pub fn step<R: Rng + ?Sized>(
    state: &MissionState,
    action: &HybridAction,
    config: &EnvConfig,
    rng: &mut R,
) -> Result<StepOutcome, EnvError> {
    action.check(config)?;
    if state.remaining.len() != config.num_users() {
        return Err(EnvError::Dimension(format!(
            "state has {} users, config {}",
            state.remaining.len(),
            config.num_users()
        )));
    }
    if state.is_complete() {
        return Ok(StepOutcome {
            next_state: state.clone(),
            reward_discrete: 0.0,
            reward_continuous: 0.0,
            done: true,
            failed: false,
            out_of_bounds: false,
            diagnostics: StepDiagnostics {
                rates_bps: vec![0.0; state.remaining.len()],
                delivered_bits: vec![0.0; state.remaining.len()],
                ..Default::default()
            },
        });
    }

    let l = config.area_size;
    let raw_x = state.uav_xy.0 + action.delta_xy.0;
    let raw_y = state.uav_xy.1 + action.delta_xy.1;
    let out_of_bounds = !(0.0..=l).contains(&raw_x) || !(0.0..=l).contains(&raw_y);
    let uav_xy = (raw_x.clamp(0.0, l), raw_y.clamp(0.0, l));
    let uav = Position3D::new(uav_xy.0, uav_xy.1, config.uav_height);
    let realization = realize_channel(&state.users, uav, &config.channel, rng)?;

    let active = state.active_users();
    let mut choices = vec![0; state.remaining.len()];
    let mut powers = vec![0.0; state.remaining.len()];
    for &n in &active {
        choices[n] = action.assignment.choices()[n];
        powers[n] = action.powers[n];
    }
    let assignment = ChannelAssignment::new(choices, config.num_channels())?;
    let rates = all_rates(&realization, &assignment, &powers, config.channel.bandwidth_hz)?;

    let mut remaining = state.remaining.clone();
    let mut delivered = vec![0.0; remaining.len()];
    let mut finished_now = Vec::new();
    for &n in &active {
        let sent = (rates[n] * config.slot_seconds).min(remaining[n]);
        delivered[n] = sent;
        remaining[n] -= sent;
        if remaining[n] <= 0.0 {
            remaining[n] = 0.0;
            finished_now.push(n);
        }
    }

    let slot = state.slot + 1;
    let complete = remaining.iter().all(|&r| r <= 0.0);
    let failed = !complete && slot > config.max_slots();
    let utility_users = if config.utility_on_completion {
        &finished_now
    } else {
        &active
    };
    let rewards = reward_components(&action.etas, utility_users, failed, out_of_bounds, config)?;

    Ok(StepOutcome {
        next_state: MissionState {
            users: state.users.clone(),
            remaining,
            uav_xy,
            realization,
            slot,
        },
        reward_discrete: rewards.discrete,
        reward_continuous: rewards.continuous,
        done: complete || failed,
        failed,
        out_of_bounds,
        diagnostics: StepDiagnostics {
            rates_bps: rates,
            delivered_bits: delivered,
            active,
            utility: rewards.utility,
            quality_sum: rewards.quality_sum,
            energy_sum_j: rewards.energy_sum_j,
        },
    })
}

/// Size `(M+1)^N` of the joint channel-selection space, or an error past `cap`.
pub fn discrete_action_count(
    num_users: usize,
    num_channels: usize,
    cap: usize,
) -> Result<usize, EnvError> {
    let too_large = EnvError::ActionSpaceTooLarge {
        channels_plus_one: num_channels + 1,
        users: num_users,
        cap,
    };
    let exp = u32::try_from(num_users).map_err(|_| too_large.clone())?;
    match (num_channels + 1).checked_pow(exp) {
        Some(size) if size <= cap => Ok(size),
        _ => Err(too_large),
    }
}

/// Base-(M+1) positional code of an assignment, user 0 least significant.
pub fn encode_discrete(assignment: &ChannelAssignment, num_channels: usize) -> usize {
    let base = num_channels + 1;
    assignment
        .choices()
        .iter()
        .rev()
        .fold(0, |acc, &c| acc * base + c)
}

pub fn decode_discrete(
    index: usize,
    num_users: usize,
    num_channels: usize,
) -> Result<ChannelAssignment, EnvError> {
    let base = num_channels + 1;
    let size = u32::try_from(num_users)
        .ok()
        .and_then(|e| base.checked_pow(e))
        .unwrap_or(usize::MAX);
    if index >= size {
        return Err(EnvError::IndexOutOfRange { index, size });
    }
    let mut rest = index;
    let choices = (0..num_users)
        .map(|_| {
            let c = rest % base;
            rest /= base;
            c
        })
        .collect();
    Ok(ChannelAssignment::new(choices, num_channels)?)
}

/// Scaled CNR feature `log10(1 + cnr) / 10`.
fn cnr_feature(cnr: f64) -> f64 {
    (1.0 + cnr).log10() / 10.0
}

/// Channel-agent observation: normalized backlogs then the CNR matrix.
pub fn observe_discrete(state: &MissionState, config: &EnvConfig) -> Vec<f64> {
    let u = config.data_size_bits;
    state
        .remaining
        .iter()
        .map(|&r| r / u)
        .chain(state.realization.cnrs().iter().map(|&c| cnr_feature(c)))
        .collect()
}

/// Continuous-agent observation: the channel-agent features plus the UAV
/// position normalized by the area size.
pub fn observe_continuous(state: &MissionState, config: &EnvConfig) -> Vec<f64> {
    let mut obs = observe_discrete(state, config);
    obs.push(state.uav_xy.0 / config.area_size);
    obs.push(state.uav_xy.1 / config.area_size);
    obs
}

pub fn discrete_obs_dim(config: &EnvConfig) -> usize {
    config.num_users() * (1 + config.num_channels())
}

pub fn continuous_obs_dim(config: &EnvConfig) -> usize {
    discrete_obs_dim(config) + 2
}

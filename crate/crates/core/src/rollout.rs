//! Running whole episodes and summarizing them.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, Controller};
use crate::env::{reset, step, EnvConfig, HybridAction, MissionState, StepOutcome};

/// Per-episode summary written to the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Seconds until every backlog drained, or until the deadline passed.
    pub mission_time: f64,
    pub completed: bool,
    pub total_reward_d: f64,
    pub total_reward_c: f64,
    /// Mean model scale over (active user, slot) pairs.
    pub mean_eta: f64,
    /// Joules spent by active users over the episode.
    pub total_energy: f64,
    pub total_quality: f64,
}

/// Folds step outcomes into an [`EpisodeRecord`].
#[derive(Debug, Clone, Default)]
pub struct EpisodeAccumulator {
    reward_d: f64,
    reward_c: f64,
    eta_sum: f64,
    eta_count: usize,
    energy: f64,
    quality: f64,
}

impl EpisodeAccumulator {
    pub fn add(&mut self, action: &HybridAction, outcome: &StepOutcome) {
        self.reward_d += outcome.reward_discrete;
        self.reward_c += outcome.reward_continuous;
        for &n in &outcome.diagnostics.active {
            self.eta_sum += action.etas[n];
            self.eta_count += 1;
        }
        self.energy += outcome.diagnostics.energy_sum_j;
        self.quality += outcome.diagnostics.quality_sum;
    }

    pub fn finish(self, episode: usize, last: &MissionState, config: &EnvConfig) -> EpisodeRecord {
        EpisodeRecord {
            episode,
            mission_time: last.slot as f64 * config.slot_seconds,
            completed: last.is_complete(),
            total_reward_d: self.reward_d,
            total_reward_c: self.reward_c,
            mean_eta: if self.eta_count == 0 {
                0.0
            } else {
                self.eta_sum / self.eta_count as f64
            },
            total_energy: self.energy,
            total_quality: self.quality,
        }
    }
}

/// One row of an exported episode trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub slot: usize,
    pub uav_x: f64,
    pub uav_y: f64,
    pub remaining: Vec<f64>,
    pub rates: Vec<f64>,
    pub reward_d: f64,
    pub reward_c: f64,
}

impl TraceRow {
    /// `slot,uav_x,uav_y,remaining_0..remaining_{N-1},rate_0..rate_{N-1},reward_d,reward_c`
    pub fn header(num_users: usize) -> Vec<String> {
        let mut h = vec!["slot".to_string(), "uav_x".into(), "uav_y".into()];
        h.extend((0..num_users).map(|n| format!("remaining_{n}")));
        h.extend((0..num_users).map(|n| format!("rate_{n}")));
        h.push("reward_d".into());
        h.push("reward_c".into());
        h
    }

    pub fn fields(&self) -> Vec<String> {
        let mut f = vec![self.slot.to_string(), self.uav_x.to_string(), self.uav_y.to_string()];
        f.extend(self.remaining.iter().map(f64::to_string));
        f.extend(self.rates.iter().map(f64::to_string));
        f.push(self.reward_d.to_string());
        f.push(self.reward_c.to_string());
        f
    }
}

/// Plays one episode with `controller`.
///
/// `env_rng` drives user placement and fading, `act_rng` the controller, so
/// a fixed `env_rng` seed freezes the channel sequence across controllers.
pub fn run_episode(
    controller: &mut dyn Controller,
    config: &EnvConfig,
    episode: usize,
    env_rng: &mut dyn RngCore,
    act_rng: &mut dyn RngCore,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<EpisodeRecord, AgentError> {
    let mut state = reset(config, env_rng)?;
    let mut acc = EpisodeAccumulator::default();
    loop {
        let action = controller.decide(&state, config, act_rng)?;
        let out = step(&state, &action, config, env_rng)?;
        acc.add(&action, &out);
        if let Some(rows) = trace.as_deref_mut() {
            rows.push(TraceRow {
                slot: out.next_state.slot,
                uav_x: out.next_state.uav_xy.0,
                uav_y: out.next_state.uav_xy.1,
                remaining: out.next_state.remaining.clone(),
                rates: out.diagnostics.rates_bps.clone(),
                reward_d: out.reward_discrete,
                reward_c: out.reward_continuous,
            });
        }
        state = out.next_state;
        if out.done {
            break;
        }
    }
    Ok(acc.finish(episode, &state, config))
}

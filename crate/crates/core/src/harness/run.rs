use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::metrics::{episode_writer, summary_writer, CsvAppender, EvalSummary, SummaryRow};
use super::{HarnessError, RunConfig};
use crate::agents::{
    stream, train_policy, Algorithm, Controller, Greedy, HybridPolicy, PolicyKind, RandomPolicy,
    ACT_STREAM, ENV_STREAM,
};
use crate::env::{continuous_obs_dim, discrete_action_count, discrete_obs_dim, EnvConfig, UserPlacement};
use crate::rollout::{run_episode, EpisodeRecord, TraceRow};
use crate::semantic::{energy, optimal_eta, quality, DEFAULT_ETA_GRID};

/// Evaluation draws from a seed disjoint from the training streams.
const EVAL_SEED_SALT: u64 = 0x5eed_e7a1;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub policy: HybridPolicy,
    pub records: Vec<EpisodeRecord>,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
}

/// Trains `config.algo` and writes into `config.output_dir`:
/// `config.json`, `metrics.csv` (one row per episode), and
/// `checkpoints/episode_NNNNNN` plus `checkpoints/final`.
pub fn train(config: &RunConfig) -> Result<TrainReport, HarnessError> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let config_path = out.join("config.json");
    fs::write(&config_path, config.to_json()).map_err(io_err(&config_path))?;

    let metrics_path = out.join("metrics.csv");
    let mut writer = episode_writer(&metrics_path)?;
    let checkpoints = out.join("checkpoints");
    let interval = config.checkpoint_interval;

    let policy = HybridPolicy::new(config.algo, &config.env, &config.ppo, config.seed)?;
    let outcome = train_policy(
        policy,
        &config.env,
        &config.ppo,
        config.episodes,
        config.seed,
        |record, policy| -> Result<(), HarnessError> {
            writer.append(record)?;
            if interval > 0 && (record.episode + 1) % interval == 0 {
                policy.save(&checkpoints.join(format!("episode_{:06}", record.episode + 1)))?;
            }
            Ok(())
        },
    )?;
    let final_checkpoint = checkpoints.join("final");
    outcome.policy.save(&final_checkpoint)?;
    Ok(TrainReport {
        policy: outcome.policy,
        records: outcome.records,
        metrics_path,
        final_checkpoint,
    })
}

/// Plays `config.eval_episodes` episodes with `controller`.
///
/// With `eval_fading_seed` set, every episode replays the same placement
/// and fading sequence.
pub fn evaluate_controller(
    controller: &mut dyn Controller,
    config: &RunConfig,
) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let eval_seed = config.seed ^ EVAL_SEED_SALT;
    let mut env_rng = stream(eval_seed, ENV_STREAM);
    let mut act_rng = stream(eval_seed, ACT_STREAM);
    let mut records = Vec::with_capacity(config.eval_episodes);
    for episode in 0..config.eval_episodes {
        if let Some(fading) = config.eval_fading_seed {
            env_rng = stream(fading, ENV_STREAM);
        }
        records.push(run_episode(
            controller,
            &config.env,
            episode,
            &mut env_rng,
            &mut act_rng,
            None,
        )?);
    }
    Ok(records)
}

/// Errors unless `policy` was built for the observation and action shapes
/// of `env`.
pub fn check_compatible(policy: &HybridPolicy, env: &EnvConfig, action_cap: usize) -> Result<(), HarnessError> {
    let n = env.num_users();
    let actions = discrete_action_count(n, env.num_channels(), action_cap)
        .map_err(|e| HarnessError::InvalidArgument(e.to_string()))?;
    let d = policy.discrete_agent();
    let c = policy.continuous_agent();
    let expected_c = match policy.algorithm() {
        Algorithm::Hybrid => 2 * n + 2,
        Algorithm::Ep | Algorithm::Triple => n + 2,
    };
    let mismatch = if d.obs_dim() != discrete_obs_dim(env) {
        Some(format!("discrete observation size {} vs {}", d.obs_dim(), discrete_obs_dim(env)))
    } else if d.kind() != (PolicyKind::Categorical { actions }) {
        Some(format!("discrete action count differs from {actions}"))
    } else if c.obs_dim() != continuous_obs_dim(env) {
        Some(format!("continuous observation size {} vs {}", c.obs_dim(), continuous_obs_dim(env)))
    } else if c.kind() != (PolicyKind::Gaussian { dim: expected_c }) {
        Some(format!("continuous action size differs from {expected_c}"))
    } else {
        None
    };
    match mismatch {
        Some(m) => Err(HarnessError::Incompatible(m)),
        None => Ok(()),
    }
}

/// Greedy evaluation of an in-memory policy.
pub fn evaluate_policy(policy: &HybridPolicy, config: &RunConfig) -> Result<Vec<EpisodeRecord>, HarnessError> {
    check_compatible(policy, &config.env, config.ppo.action_space_cap)?;
    evaluate_controller(&mut Greedy(policy), config)
}

/// Loads the checkpoint in `checkpoint_dir` and evaluates it greedily.
/// The checkpoint files are only read.
pub fn evaluate(
    config: &RunConfig,
    checkpoint_dir: &Path,
) -> Result<(EvalSummary, Vec<EpisodeRecord>), HarnessError> {
    config.validate()?;
    let policy = HybridPolicy::load(checkpoint_dir)?;
    let records = evaluate_policy(&policy, config)?;
    Ok((EvalSummary::from_records(&records), records))
}

/// Plays one greedy episode and returns its per-slot trace.
pub fn trace_episode(policy: &HybridPolicy, config: &RunConfig) -> Result<Vec<TraceRow>, HarnessError> {
    check_compatible(policy, &config.env, config.ppo.action_space_cap)?;
    let seed = config.eval_fading_seed.unwrap_or(config.seed ^ EVAL_SEED_SALT);
    let mut rows = Vec::new();
    run_episode(
        &mut Greedy(policy),
        &config.env,
        0,
        &mut stream(seed, ENV_STREAM),
        &mut stream(seed, ACT_STREAM),
        Some(&mut rows),
    )?;
    Ok(rows)
}

/// Configuration knob varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NumUsers,
    Lambda,
    /// Backlog per user, in megabits.
    DataSize,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 3] = [SweepAxis::NumUsers, SweepAxis::Lambda, SweepAxis::DataSize];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NumUsers => "num_users",
            Self::Lambda => "lambda",
            Self::DataSize => "data_size",
        }
    }

    /// Returns a copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig, HarnessError> {
        let mut c = base.clone();
        match self {
            Self::NumUsers => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(HarnessError::InvalidArgument(format!(
                        "num_users must be a positive integer, got {value}"
                    )));
                }
                let n = value as usize;
                if let UserPlacement::Fixed { positions } = &c.env.user_placement {
                    if positions.len() != n {
                        return Err(HarnessError::InvalidArgument(format!(
                            "fixed placement lists {} users, sweep asks for {n}",
                            positions.len()
                        )));
                    }
                }
                c.env.channel.num_users = n;
            }
            Self::Lambda => c.env.weights.lambda = value,
            Self::DataSize => c.env.data_size_bits = value * 1e6,
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                HarnessError::InvalidArgument(format!(
                    "unknown axis `{s}` (expected num_users, lambda or data_size)"
                ))
            })
    }
}

/// Closed-form per-user optimum for one trade-off weight. Mission-time
/// columns stay empty.
pub fn oracle_row(config: &RunConfig, lambda: f64) -> SummaryRow {
    let env = &config.env;
    let eta = optimal_eta(
        lambda,
        env.weights.energy_norm,
        DEFAULT_ETA_GRID,
        &env.quality,
        &env.energy,
    );
    SummaryRow {
        axis: SweepAxis::Lambda.to_string(),
        value: lambda.to_string(),
        algo: "oracle".into(),
        mean_mission_time: None,
        std_mission_time: None,
        completion_rate: None,
        mean_eta: eta,
        mean_quality: quality(eta, &env.quality).unwrap_or(f64::NAN),
        mean_energy: energy(eta, &env.energy).unwrap_or(f64::NAN),
        episodes: 0,
    }
}

fn open_table(dir: &Path, name: &str) -> Result<CsvAppender, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    summary_writer(&dir.join(name))
}

/// Trains and evaluates one run per value, writing `sweep.csv` under
/// `base.output_dir`. Point `i` uses seed `base.seed + i`. A lambda sweep
/// also emits an `oracle` row per value.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut table = open_table(&base.output_dir, "sweep.csv")?;
    let mut rows = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        let mut cfg = axis.apply(base, v)?;
        cfg.seed = base.seed.wrapping_add(i as u64);
        cfg.output_dir = base.output_dir.join(format!("{axis}_{v}"));
        let report = train(&cfg)?;
        let summary = EvalSummary::from_records(&evaluate_policy(&report.policy, &cfg)?);
        let mut point = vec![SummaryRow::from_summary(axis.as_str(), &v.to_string(), cfg.algo.as_str(), &summary)];
        if axis == SweepAxis::Lambda {
            point.push(oracle_row(&cfg, v));
        }
        for row in point {
            table.append(&row)?;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Evaluates an already trained controller at each value without training.
/// `make` builds the controller for each swept configuration; `label` fills
/// the algo column.
pub fn sweep_frozen<'c, F>(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    label: &str,
    mut make: F,
) -> Result<Vec<SummaryRow>, HarnessError>
where
    F: FnMut(&RunConfig) -> Result<Box<dyn Controller + 'c>, HarnessError>,
{
    let mut table = open_table(&base.output_dir, "sweep.csv")?;
    let mut rows = Vec::new();
    for &v in values {
        let cfg = axis.apply(base, v)?;
        let mut controller = make(&cfg)?;
        let summary = EvalSummary::from_records(&evaluate_controller(controller.as_mut(), &cfg)?);
        let row = SummaryRow::from_summary(axis.as_str(), &v.to_string(), label, &summary);
        table.append(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Trains every algorithm on `base` and evaluates each next to a uniformly
/// random policy. Writes `compare.csv` and one subdirectory per algorithm.
pub fn compare(base: &RunConfig) -> Result<Vec<SummaryRow>, HarnessError> {
    base.validate()?;
    let mut table = open_table(&base.output_dir, "compare.csv")?;
    let mut rows = Vec::new();
    for algo in Algorithm::ALL {
        let mut cfg = base.clone();
        cfg.algo = algo;
        cfg.output_dir = base.output_dir.join(algo.as_str());
        let report = train(&cfg)?;
        let summary = EvalSummary::from_records(&evaluate_policy(&report.policy, &cfg)?);
        rows.push(SummaryRow::from_summary("algo", algo.as_str(), algo.as_str(), &summary));
    }
    let random = EvalSummary::from_records(&evaluate_controller(&mut RandomPolicy, base)?);
    rows.push(SummaryRow::from_summary("algo", "random", "random", &random));
    for row in &rows {
        table.append(row)?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::FixedPolicy;
    use crate::channel::ChannelParams;

    fn tiny(dir: &Path) -> RunConfig {
        let mut c = RunConfig {
            episodes: 6,
            eval_episodes: 3,
            checkpoint_interval: 2,
            output_dir: dir.to_path_buf(),
            ..Default::default()
        };
        c.env.channel = ChannelParams {
            num_users: 2,
            num_channels: 2,
            ..Default::default()
        };
        c.env.data_size_bits = 5e6;
        c.env.max_time_s = 10.0;
        c.ppo.rollout_slots = 8;
        c.ppo.minibatch_size = 4;
        c
    }

    #[test]
    fn train_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let report = train(&cfg).unwrap();
        assert_eq!(report.records.len(), 6);
        assert!(dir.path().join("config.json").is_file());
        for e in [2, 4, 6] {
            assert!(dir.path().join(format!("checkpoints/episode_{e:06}/manifest.json")).is_file());
        }
        assert!(report.final_checkpoint.join("continuous.json").is_file());
        let rows = super::super::read_episodes(&report.metrics_path).unwrap();
        assert_eq!(rows, report.records);
    }

    #[test]
    fn evaluate_leaves_checkpoint_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let report = train(&cfg).unwrap();
        let before: Vec<_> = ["manifest", "discrete", "continuous"]
            .iter()
            .map(|f| fs::read(report.final_checkpoint.join(format!("{f}.json"))).unwrap())
            .collect();
        let (a, _) = evaluate(&cfg, &report.final_checkpoint).unwrap();
        let (b, _) = evaluate(&cfg, &report.final_checkpoint).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.episodes, 3);
        let after: Vec<_> = ["manifest", "discrete", "continuous"]
            .iter()
            .map(|f| fs::read(report.final_checkpoint.join(format!("{f}.json"))).unwrap())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn incompatible_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let report = train(&cfg).unwrap();
        let mut other = cfg.clone();
        other.env.channel.num_users = 3;
        let err = evaluate(&other, &report.final_checkpoint).unwrap_err();
        assert!(matches!(err, HarnessError::Incompatible(_)));
    }

    #[test]
    fn frozen_fading_makes_episodes_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.eval_fading_seed = Some(11);
        let mut fixed = FixedPolicy::round_robin(&cfg.env, 0.5);
        let recs = evaluate_controller(&mut fixed, &cfg).unwrap();
        assert!(recs.windows(2).all(|w| w[0].mission_time == w[1].mission_time));
    }

    #[test]
    fn axis_parsing_and_application() {
        assert_eq!("lambda".parse::<SweepAxis>().unwrap(), SweepAxis::Lambda);
        assert!("speed".parse::<SweepAxis>().is_err());
        let base = RunConfig::default();
        assert_eq!(SweepAxis::DataSize.apply(&base, 40.0).unwrap().env.data_size_bits, 40e6);
        assert_eq!(SweepAxis::NumUsers.apply(&base, 4.0).unwrap().env.num_users(), 4);
        assert!(SweepAxis::NumUsers.apply(&base, 2.5).is_err());
        assert!(SweepAxis::Lambda.apply(&base, 1.5).is_err());
    }

    #[test]
    fn lambda_sweep_adds_oracle_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.episodes = 2;
        cfg.eval_episodes = 1;
        let rows = sweep(&cfg, SweepAxis::Lambda, &[0.0, 1.0]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1].algo, "oracle");
        assert_eq!(rows[3].mean_eta, 1.0);
        assert!(rows[1].mean_mission_time.is_none());
        let table = super::super::read_summaries(&dir.path().join("sweep.csv")).unwrap();
        assert_eq!(table, rows);
    }
}

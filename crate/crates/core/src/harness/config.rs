use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Algorithm, PpoConfig};
use crate::env::{EnvConfig, EnvError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}:{column}: {message} (near `{context}`)")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
        context: String,
    },
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Everything needed to reproduce one training or evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub algo: Algorithm,
    pub episodes: usize,
    pub seed: u64,
    pub eval_episodes: usize,
    pub output_dir: PathBuf,
    /// Episodes between intermediate checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    /// When set, every evaluation episode replays this fading seed.
    pub eval_fading_seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            algo: Algorithm::Hybrid,
            episodes: 5000,
            seed: 0,
            eval_episodes: 100,
            output_dir: PathBuf::from("runs/default"),
            checkpoint_interval: 500,
            eval_fading_seed: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.episodes == 0 {
            return Err(ConfigError::invalid("episodes", "must be at least 1"));
        }
        if self.eval_episodes == 0 {
            return Err(ConfigError::invalid("eval_episodes", "must be at least 1"));
        }
        self.env.validate().map_err(|e| match e {
            EnvError::InvalidField { field, reason } => {
                ConfigError::invalid(format!("env.{field}"), reason)
            }
            other => ConfigError::invalid("env", other.to_string()),
        })?;
        if let Some((field, reason)) = self.ppo.invalid_field() {
            return Err(ConfigError::invalid(format!("ppo.{field}"), reason));
        }
        crate::env::discrete_action_count(
            self.env.num_users(),
            self.env.num_channels(),
            self.ppo.action_space_cap,
        )
        .map_err(|e| ConfigError::invalid("env.num_users", e.to_string()))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a JSON run configuration. Missing fields take
/// their defaults.
pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| {
        let context = text
            .lines()
            .nth(e.line().saturating_sub(1))
            .unwrap_or("")
            .trim()
            .chars()
            .take(60)
            .collect();
        ConfigError::Parse {
            origin: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
            context,
        }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::UserPlacement;

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse_config("{}", "test").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.env.num_users(), 5);
        assert_eq!(c.env.num_channels(), 3);
        assert_eq!(c.env.channel.bandwidth_hz, 5e6);
        assert_eq!(c.env.max_power, 5.0);
        assert_eq!(c.env.channel.noise_power_w, 5e-8);
        assert_eq!(c.env.max_speed, 10.0);
        assert_eq!(c.env.area_size, 200.0);
    }

    #[test]
    fn partial_override() {
        let c = parse_config(r#"{"env": {"num_users": 8}}"#, "test").unwrap();
        assert_eq!(c.env.num_users(), 8);
        assert_eq!(c.env.num_channels(), 3);
        assert_eq!(c.ppo, PpoConfig::default());
    }

    #[test]
    fn negative_bandwidth_is_named() {
        let err = parse_config(r#"{"env": {"bandwidth_hz": -5}}"#, "test").unwrap_err();
        match err {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "env.bandwidth_hz"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = parse_config("{\n  \"seed\": 1,\n  \"episodes\": \"many\"\n}", "cfg.json").unwrap_err();
        match err {
            ConfigError::Parse { line, context, .. } => {
                assert_eq!(line, 3);
                assert!(context.contains("episodes"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn oversized_action_space_rejected() {
        let err = parse_config(r#"{"env": {"num_users": 12}}"#, "test").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { .. }));
    }

    #[test]
    fn serialize_round_trip() {
        let mut c = RunConfig::default();
        c.env.user_placement = UserPlacement::Fixed {
            positions: vec![[1.0, 2.0]; 5],
        };
        c.env.weights.lambda = 0.3;
        c.algo = Algorithm::Triple;
        c.eval_fading_seed = Some(9);
        c.ppo.learning_rate = 1.234_567_890_123e-3;
        assert_eq!(parse_config(&c.to_json(), "rt").unwrap(), c);
    }
}

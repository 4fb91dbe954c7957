//! Run orchestration: configuration files, training with checkpoints and
//! metrics, evaluation, parameter sweeps, and algorithm comparison.

mod config;
mod metrics;
mod run;

use thiserror::Error;

use crate::agents::AgentError;

pub use config::{load_config, parse_config, ConfigError, RunConfig};
pub use metrics::{
    episode_writer, read_episodes, read_summaries, summary_writer, write_trace, CsvAppender,
    EvalSummary, SummaryRow, EPISODE_COLUMNS, SUMMARY_COLUMNS,
};
pub use run::{
    check_compatible, compare, evaluate, evaluate_controller, evaluate_policy, oracle_row,
    sweep, sweep_frozen, train, trace_episode, SweepAxis, TrainReport,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("checkpoint does not fit the configuration: {0}")]
    Incompatible(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl HarnessError {
    /// Short stable tag for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(ConfigError::Io { .. }) => "io",
            Self::Config(ConfigError::Parse { .. }) => "config_parse",
            Self::Config(ConfigError::Invalid { .. }) => "config_invalid",
            Self::Agent(AgentError::Io { .. }) => "io",
            Self::Agent(AgentError::Json { .. }) => "checkpoint",
            Self::Agent(AgentError::Mismatch(_)) => "checkpoint",
            Self::Agent(_) => "runtime",
            Self::Io { .. } => "io",
            Self::Csv { .. } => "csv",
            Self::Incompatible(_) => "checkpoint",
            Self::InvalidArgument(_) => "invalid_argument",
        }
    }
}

//! `skycollect` command-line interface.
//!
//! Every failure prints a single JSON object `{"error": kind, "message": text}`
//! on stderr and exits nonzero (2 for usage errors, 1 otherwise).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use skycollect::agents::{Greedy, HybridPolicy};
use skycollect::harness::{
    self, check_compatible, episode_writer, load_config, EvalSummary, HarnessError, RunConfig,
    SweepAxis,
};
use skycollect::Algorithm;

#[derive(Parser)]
#[command(name = "skycollect", version, about = "Train and evaluate UAV semantic data-collection policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm and write metrics and checkpoints.
    Train(Common),
    /// Evaluate a saved checkpoint greedily.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory; defaults to OUT/checkpoints/final.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Vary one configuration field and train/evaluate at each value.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// num_users, lambda, or data_size (megabits).
        #[arg(long)]
        axis: SweepAxisArg,
        /// Comma-separated values, e.g. 0,0.25,0.5.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        /// Evaluate this frozen checkpoint at each value instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train all three algorithms and compare them with a random policy.
    Compare(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_algo)]
    algo: Option<Algorithm>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone)]
struct SweepAxisArg(SweepAxis);

impl std::str::FromStr for SweepAxisArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.parse().map(SweepAxisArg).map_err(|e: HarnessError| e.to_string())
    }
}

fn parse_algo(s: &str) -> Result<Algorithm, String> {
    s.parse::<Algorithm>().map_err(|e| e.to_string())
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, HarnessError> {
        let mut config = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(a) = self.algo {
            config.algo = a;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(e) = self.episodes {
            config.episodes = e;
        }
        if let Some(o) = &self.out {
            config.output_dir = o.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new("."))).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    std::fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn summary_json(s: &EvalSummary) -> serde_json::Value {
    serde_json::to_value(s).expect("summary serializes")
}

fn run(cli: Cli) -> Result<serde_json::Value, HarnessError> {
    match cli.command {
        Command::Train(common) => {
            let config = common.resolve()?;
            let report = harness::train(&config)?;
            let last = report.records.last();
            Ok(json!({
                "command": "train",
                "algo": config.algo.as_str(),
                "episodes": report.records.len(),
                "metrics": report.metrics_path,
                "checkpoint": report.final_checkpoint,
                "last_mission_time": last.map(|r| r.mission_time),
            }))
        }
        Command::Eval { common, checkpoint } => {
            let config = common.resolve()?;
            let ckpt = checkpoint.unwrap_or_else(|| config.output_dir.join("checkpoints").join("final"));
            let (summary, records) = harness::evaluate(&config, &ckpt)?;
            let out = &config.output_dir;
            std::fs::create_dir_all(out).map_err(|source| HarnessError::Io {
                path: out.display().to_string(),
                source,
            })?;
            let mut w = episode_writer(&out.join("eval_episodes.csv"))?;
            for r in &records {
                w.append(r)?;
            }
            let value = summary_json(&summary);
            write_json(&out.join("eval_summary.json"), &value)?;
            Ok(json!({ "command": "eval", "checkpoint": ckpt, "summary": value }))
        }
        Command::Sweep {
            common,
            axis,
            values,
            checkpoint,
        } => {
            let config = common.resolve()?;
            let rows = match checkpoint {
                None => harness::sweep(&config, axis.0, &values)?,
                Some(dir) => {
                    let policy = HybridPolicy::load(&dir)?;
                    let label = format!("{}_frozen", policy.algorithm());
                    harness::sweep_frozen(&config, axis.0, &values, &label, |cfg| {
                        check_compatible(&policy, &cfg.env, cfg.ppo.action_space_cap)?;
                        Ok(Box::new(Greedy(&policy)))
                    })?
                }
            };
            Ok(json!({
                "command": "sweep",
                "axis": axis.0.as_str(),
                "rows": rows.len(),
                "table": config.output_dir.join("sweep.csv"),
            }))
        }
        Command::Compare(common) => {
            let config = common.resolve()?;
            let rows = harness::compare(&config)?;
            let means: serde_json::Map<_, _> = rows
                .iter()
                .map(|r| (r.algo.clone(), json!(r.mean_mission_time)))
                .collect();
            Ok(json!({
                "command": "compare",
                "table": config.output_dir.join("compare.csv"),
                "mean_mission_time": means,
            }))
        }
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let line = json!({ "error": kind, "message": message.trim().replace('\n', " ") });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("usage error");
            return fail("usage", first.trim_start_matches("error: "), 2);
        }
    };
    match run(cli) {
        Ok(value) => {
            println!("{value}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string(), 1),
    }
}

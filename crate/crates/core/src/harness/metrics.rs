//! CSV outputs. Column names and order are fixed so files from different
//! runs concatenate cleanly.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::rollout::{EpisodeRecord, TraceRow};

pub const EPISODE_COLUMNS: [&str; 8] = [
    "episode",
    "mission_time",
    "completed",
    "total_reward_d",
    "total_reward_c",
    "mean_eta",
    "total_energy",
    "total_quality",
];

pub const SUMMARY_COLUMNS: [&str; 10] = [
    "axis",
    "value",
    "algo",
    "mean_mission_time",
    "std_mission_time",
    "completion_rate",
    "mean_eta",
    "mean_quality",
    "mean_energy",
    "episodes",
];

/// Aggregate of evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_mission_time: f64,
    pub std_mission_time: f64,
    pub completion_rate: f64,
    /// Mean of the per-episode mean model scale.
    pub mean_eta: f64,
    /// Mean per-episode energy in joules.
    pub mean_energy: f64,
    /// Mean per-episode summed quality.
    pub mean_quality: f64,
    pub mean_reward_d: f64,
}

impl EvalSummary {
    pub fn from_records(records: &[EpisodeRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |f: fn(&EpisodeRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let mean_time = mean(|r| r.mission_time);
        let var = records
            .iter()
            .map(|r| (r.mission_time - mean_time).powi(2))
            .sum::<f64>()
            / n;
        Self {
            episodes: records.len(),
            mean_mission_time: mean_time,
            std_mission_time: var.sqrt(),
            completion_rate: mean(|r| if r.completed { 1.0 } else { 0.0 }),
            mean_eta: mean(|r| r.mean_eta),
            mean_energy: mean(|r| r.total_energy),
            mean_quality: mean(|r| r.total_quality),
            mean_reward_d: mean(|r| r.total_reward_d),
        }
    }
}

/// One line of a sweep or comparison table. Mission-time columns are empty
/// for analytic rows that involve no episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub axis: String,
    pub value: String,
    pub algo: String,
    pub mean_mission_time: Option<f64>,
    pub std_mission_time: Option<f64>,
    pub completion_rate: Option<f64>,
    pub mean_eta: f64,
    pub mean_quality: f64,
    pub mean_energy: f64,
    pub episodes: usize,
}

impl SummaryRow {
    pub fn from_summary(axis: &str, value: &str, algo: &str, s: &EvalSummary) -> Self {
        Self {
            axis: axis.to_string(),
            value: value.to_string(),
            algo: algo.to_string(),
            mean_mission_time: Some(s.mean_mission_time),
            std_mission_time: Some(s.std_mission_time),
            completion_rate: Some(s.completion_rate),
            mean_eta: s.mean_eta,
            mean_quality: s.mean_quality,
            mean_energy: s.mean_energy,
            episodes: s.episodes,
        }
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Renders one CSV line (with terminator) into memory.
fn encode_row<T: Serialize>(row: &T) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.serialize(row)?;
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

fn encode_fields<I, S>(fields: I) -> Result<Vec<u8>, csv::Error>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(fields)?;
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

/// Append-only CSV file. Each row reaches the file in a single write, so an
/// interrupted run leaves only whole rows behind.
pub struct CsvAppender {
    path: PathBuf,
    file: File,
}

impl CsvAppender {
    /// Creates (truncating) `path` and writes the header row.
    pub fn create<I, S>(path: &Path, header: I) -> Result<Self, HarnessError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let file = File::create(path).map_err(io_err(path))?;
        let mut me = Self {
            path: path.to_path_buf(),
            file,
        };
        let bytes = encode_fields(header).map_err(csv_err(path))?;
        me.write_bytes(&bytes)?;
        Ok(me)
    }

    /// Opens an existing file for appending without writing a header.
    pub fn append_to(path: &Path) -> Result<Self, HarnessError> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    fn write_bytes(&mut self, bytes: &[u8]) -> Result<(), HarnessError> {
        self.file.write_all(bytes).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }

    pub fn append<T: Serialize>(&mut self, row: &T) -> Result<(), HarnessError> {
        let bytes = encode_row(row).map_err(csv_err(&self.path))?;
        self.write_bytes(&bytes)
    }

    pub fn append_fields<I, S>(&mut self, fields: I) -> Result<(), HarnessError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let bytes = encode_fields(fields).map_err(csv_err(&self.path))?;
        self.write_bytes(&bytes)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn episode_writer(path: &Path) -> Result<CsvAppender, HarnessError> {
    CsvAppender::create(path, EPISODE_COLUMNS)
}

pub fn summary_writer(path: &Path) -> Result<CsvAppender, HarnessError> {
    CsvAppender::create(path, SUMMARY_COLUMNS)
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<Result<Vec<EpisodeRecord>, _>>()
        .map_err(csv_err(path))
}

pub fn read_summaries(path: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<Result<Vec<SummaryRow>, _>>()
        .map_err(csv_err(path))
}

pub fn write_trace(path: &Path, num_users: usize, rows: &[TraceRow]) -> Result<(), HarnessError> {
    let mut w = CsvAppender::create(path, TraceRow::header(num_users))?;
    for row in rows {
        w.append_fields(row.fields())?;
    }
    Ok(())
}

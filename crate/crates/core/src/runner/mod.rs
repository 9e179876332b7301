//! Operational surface: run configuration, persistence and the commands the
//! `ncmrec` binary dispatches to.

mod commands;
mod config;
mod report;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MetricRecord;
use crate::rl::Models;

pub use commands::{
    build_env, command_evaluate, scorer_for, command_prepare_data, command_train, command_verify_consistency, evaluate_models,
    ConsistencyArgs, ConsistencyCommandReport, EvalReport, HeadConsistency, PrepareArgs, PreparedData, RunEnv,
    TrainSummary,
};
pub use config::{Baseline, EnvKind, RunConfig};
pub use report::{command_report, ctr_curve_svg, summarize_metrics, MetricSummary};

pub const CHECKPOINT_FORMAT: &str = "ncmrec-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild and evaluate a trained recommender. Random
/// streams are keyed by `(seed, purpose, iteration, ...)`, so the completed
/// iteration count is the only stream position to record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub iteration: usize,
    pub config: RunConfig,
    pub models: Models,
}

impl Checkpoint {
    pub fn new(config: RunConfig, iteration: usize, models: Models) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            iteration,
            config,
            models,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let format = value.get("format").and_then(|v| v.as_str());
        if format != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Checkpoint(format!("{} is not an ncmrec checkpoint", path.display())));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::Checkpoint(format!(
                "{} has version {}, expected {CHECKPOINT_VERSION}",
                path.display(),
                version.map_or("unknown".to_string(), |v| v.to_string())
            )));
        }
        let ck: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ck.config.train.validate()?;
        if !ck.models.all_finite() {
            return Err(Error::Checkpoint(format!("{} holds non-finite parameters", path.display())));
        }
        Ok(ck)
    }
}

pub fn write_metric_log(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn append_metric_log(file: &mut impl Write, records: &[MetricRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *file, r)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_metric_log(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

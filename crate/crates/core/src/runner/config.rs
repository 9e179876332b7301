//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::env::SimulatorConfig;
use crate::error::{Error, Result};
use crate::rl::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Replay,
    Simulator,
}

/// Which scorer evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// The trained agent.
    None,
    /// Uniformly random recommendations and rankings.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub optimizer: OptimizerKind,
    pub env: EnvKind,
    /// Session log for the replay environment.
    pub data: String,
    pub behavior_mapping: String,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub sim_catalog: usize,
    pub sim_episode_len: usize,
    pub sim_drift: f64,
    pub sim_fatigue: f64,
    pub sim_seed: u64,
    /// Logged sessions that seed the online discriminator pool.
    pub log_sessions: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// Evaluate every N iterations (0: only after the last one).
    pub eval_every: usize,
    /// Write a checkpoint every N iterations (0: only after the last one).
    pub checkpoint_every: usize,
    pub baseline: Baseline,
    pub log_wall_clock: bool,
    pub output: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            optimizer: OptimizerKind::Ppo,
            env: EnvKind::Simulator,
            data: String::new(),
            behavior_mapping: crate::env::BehaviorMapping::default().to_spec(),
            test_fraction: 0.1,
            split_seed: 0,
            sim_catalog: 100,
            sim_episode_len: 20,
            sim_drift: 0.1,
            sim_fatigue: 0.9,
            sim_seed: 0,
            log_sessions: 1000,
            eval_episodes: 200,
            eval_seed: 0,
            eval_every: 10,
            checkpoint_every: 0,
            baseline: Baseline::None,
            log_wall_clock: false,
            output: "runs/latest".into(),
        }
    }
}

impl RunConfig {
    fn to_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config is a struct"),
        }
    }

    fn from_map(map: Map<String, Value>) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn keys() -> Vec<String> {
        Self::default().to_map().keys().cloned().collect()
    }

    /// Sets one key from its textual value, typed by the key's current value.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut map = self.to_map();
        let current = map
            .get(key)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        let raw = raw.trim();
        let typed = match current {
            Value::Bool(_) => Value::Bool(
                raw.parse::<bool>()
                    .map_err(|_| Error::Config(format!("`{key}` expects true or false, got `{raw}`")))?,
            ),
            Value::Number(n) if n.is_u64() => Value::from(
                raw.parse::<u64>()
                    .map_err(|_| Error::Config(format!("`{key}` expects a non-negative integer, got `{raw}`")))?,
            ),
            Value::Number(_) => {
                let x = raw
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{raw}`")))?;
                serde_json::Number::from_f64(x)
                    .map(Value::Number)
                    .ok_or_else(|| Error::Config(format!("`{key}` must be finite")))?
            }
            _ => Value::String(raw.to_string()),
        };
        map.insert(key.to_string(), typed);
        let next = Self::from_map(map).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("`{key}`: {m}")),
            other => other,
        })?;
        *self = next;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// One `key = value` line per key, sorted by key.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            let shown = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            let _ = writeln!(out, "{k} = {shown}");
        }
        out
    }

    pub fn simulator(&self) -> SimulatorConfig {
        SimulatorConfig {
            catalog: self.sim_catalog,
            episode_len: self.sim_episode_len,
            drift: self.sim_drift,
            fatigue: self.sim_fatigue,
            seed: self.sim_seed,
            ..SimulatorConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.train.gamma, 0.7);
        assert_eq!(c.train.dim, 50);
        assert_eq!(c.train.batch_size, 256);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_types() {
        let mut c = RunConfig::default();
        assert!(c.set("gama", "0.5").is_err());
        assert!(c.set("batch_size", "-3").is_err());
        assert!(c.set("log_wall_clock", "maybe").is_err());
        let e = c.set("optimizer", "invalid").unwrap_err().to_string();
        assert!(e.contains("reinforce") && e.contains("ppo"), "{e}");
        assert!(c.set("gamma", "1.5").is_err());
        c.set("optimizer", "td").unwrap();
        assert_eq!(c.optimizer, OptimizerKind::Td);
        assert!(RunConfig::parse("window 3").is_err());
    }
}

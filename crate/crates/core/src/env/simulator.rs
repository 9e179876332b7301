//! Synthetic online user simulator.
//!
//! A user carries binary latent attributes. Each catalog item has a quality
//! `q` and a few attributes it appeals to. Recommending item `j` yields the
//! compatibility
//!
//! ```text
//! c = q_j * (0.4 + 0.6 * matched_fraction_j) * fatigue^(times j was shown)
//! ```
//!
//! and the integer reward `round(10 c)` in `0..=10`. After every step one
//! attribute may flip (preference drift). Episodes end after `episode_len`
//! steps or after `zero_streak` consecutive zero rewards.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::reward::Feedback;
use crate::rng::{self, Purpose, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    pub catalog: usize,
    pub episode_len: usize,
    pub attributes: usize,
    /// Width of the per-(attribute, value) code; the user encoding has
    /// `attributes * code_dim` entries.
    pub code_dim: usize,
    pub item_attributes: usize,
    pub drift: f64,
    pub fatigue: f64,
    pub zero_streak: usize,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            catalog: 100,
            episode_len: 20,
            attributes: 11,
            code_dim: 8,
            item_attributes: 3,
            drift: 0.1,
            fatigue: 0.9,
            zero_streak: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimItem {
    pub quality: f64,
    /// `(attribute, wanted value)` pairs.
    pub appeals: Vec<(usize, bool)>,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub config: SimulatorConfig,
    pub items: Vec<SimItem>,
    /// `codes[attr][value]`, each `code_dim` long.
    codes: Vec<[Vec<f64>; 2]>,
}

#[derive(Debug, Clone)]
pub struct SimulatorState {
    pub attributes: Vec<bool>,
    pub step: usize,
    pub exposures: Vec<u32>,
    pub zeros_in_a_row: usize,
    pub total_reward: u32,
    pub done: bool,
    rng: Stream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStep {
    pub reward: u8,
    pub feedback: Feedback,
    pub done: bool,
}

/// Feedback class implied by an integer reward.
pub fn feedback_for_reward(reward: u8) -> Feedback {
    match reward {
        7.. => Feedback::Purchase,
        3.. => Feedback::Click,
        _ => Feedback::None,
    }
}

impl Simulator {
    pub fn new(config: SimulatorConfig) -> Result<Self> {
        if config.catalog == 0 || config.episode_len == 0 || config.attributes == 0 {
            return Err(Error::invalid("simulator sizes must be positive"));
        }
        if config.item_attributes > config.attributes {
            return Err(Error::invalid("items cannot appeal to more attributes than exist"));
        }
        if !(0.0..=1.0).contains(&config.drift) || !(0.0..=1.0).contains(&config.fatigue) {
            return Err(Error::invalid("drift and fatigue must lie in [0, 1]"));
        }
        let mut rng = rng::stream(config.seed, Purpose::Catalog, &[]);
        let codes = (0..config.attributes)
            .map(|_| [0, 1].map(|_| (0..config.code_dim).map(|_| rng::normal(&mut rng)).collect()))
            .collect();
        let items = (0..config.catalog)
            .map(|_| {
                let u: f64 = rng.random();
                let attrs = rand::seq::index::sample(&mut rng, config.attributes, config.item_attributes);
                SimItem {
                    quality: u * u,
                    appeals: attrs.into_iter().map(|a| (a, rng.random::<bool>())).collect(),
                }
            })
            .collect();
        Ok(Self { config, items, codes })
    }

    pub fn catalog(&self) -> usize {
        self.items.len()
    }

    /// Fresh user for episode `episode`.
    pub fn reset(&self, episode: u64) -> SimulatorState {
        let mut rng = rng::stream(self.config.seed, Purpose::Simulator, &[episode]);
        SimulatorState {
            attributes: (0..self.config.attributes).map(|_| rng.random()).collect(),
            step: 0,
            exposures: vec![0; self.catalog()],
            zeros_in_a_row: 0,
            total_reward: 0,
            done: false,
            rng,
        }
    }

    /// Compatibility `c` in `[0, 1]` of `action` for the current user.
    pub fn compatibility(&self, state: &SimulatorState, action: usize) -> f64 {
        let item = &self.items[action];
        let matched = item
            .appeals
            .iter()
            .filter(|&&(a, v)| state.attributes[a] == v)
            .count() as f64;
        let frac = if item.appeals.is_empty() {
            1.0
        } else {
            matched / item.appeals.len() as f64
        };
        item.quality * (0.4 + 0.6 * frac) * self.config.fatigue.powi(state.exposures[action] as i32)
    }

    pub fn expected_reward(&self, state: &SimulatorState, action: usize) -> f64 {
        10.0 * self.compatibility(state, action)
    }

    /// Scripted expert: reads the latent user directly.
    pub fn expert_action(&self, state: &SimulatorState) -> usize {
        let c: Vec<f64> = (0..self.catalog()).map(|a| self.compatibility(state, a)).collect();
        argmax(&c)
    }

    /// Dense user encoding: the code of each attribute's current value.
    pub fn user_encoding(&self, state: &SimulatorState) -> Vec<f64> {
        state
            .attributes
            .iter()
            .zip(&self.codes)
            .flat_map(|(&v, c)| c[v as usize].iter().copied())
            .collect()
    }

    pub fn step(&self, state: &mut SimulatorState, action: usize) -> Result<SimStep> {
        if state.done {
            return Err(Error::invalid("episode already finished"));
        }
        if action >= self.catalog() {
            return Err(Error::invalid(format!("action {action} outside catalog of {}", self.catalog())));
        }
        let reward = (10.0 * self.compatibility(state, action)).round().clamp(0.0, 10.0) as u8;
        state.exposures[action] += 1;
        state.step += 1;
        state.total_reward += reward as u32;
        state.zeros_in_a_row = if reward == 0 { state.zeros_in_a_row + 1 } else { 0 };
        if state.rng.random::<f64>() < self.config.drift {
            let a = state.rng.random_range(0..self.config.attributes);
            state.attributes[a] = !state.attributes[a];
        }
        state.done = state.step >= self.config.episode_len || state.zeros_in_a_row >= self.config.zero_streak;
        Ok(SimStep {
            reward,
            feedback: feedback_for_reward(reward),
            done: state.done,
        })
    }
}

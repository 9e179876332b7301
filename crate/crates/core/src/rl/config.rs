use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::RewardMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Reinforce,
    Td,
    Ppo,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::Reinforce, OptimizerKind::Td, OptimizerKind::Ppo];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Reinforce => "reinforce",
            OptimizerKind::Td => "td",
            OptimizerKind::Ppo => "ppo",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown optimizer `{s}`; valid: reinforce, td, ppo")))
    }
}

/// Hyperparameters of the model and of the alternating training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub disc_lr: f64,
    pub batch_size: usize,
    pub window: usize,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub gamma_r: f64,
    pub gamma_a: f64,
    pub iterations: usize,
    pub disc_steps: usize,
    pub policy_steps: usize,
    /// Episodes (simulator) or sessions (replay) rolled per policy step.
    pub episodes: usize,
    pub ppo_epochs: usize,
    /// Random `none`-labelled items added per real record on replay data.
    pub negatives: usize,
    pub reward_mode: RewardMode,
    /// Adds 0.2 per click and 1.0 per purchase observed in the simulator.
    pub predefined_reward: bool,
    /// Lets TD gradients reach the agent through `Q + ln h`.
    pub td_policy_flow: bool,
    /// Cross-entropy regularizer of `softmax(Q)` on logged items.
    pub td_supervised: bool,
    pub supervised_weight: f64,
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub policy_hidden: usize,
    pub reward_hidden: usize,
    pub critic_hidden: usize,
    /// Cap on the online observation pool (oldest records drop first).
    pub observation_capacity: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            disc_lr: 1e-3,
            batch_size: 256,
            window: 10,
            gae_lambda: 0.97,
            clip_eps: 0.2,
            gamma_r: 0.2,
            gamma_a: 0.2,
            iterations: 100,
            disc_steps: 1,
            policy_steps: 1,
            episodes: 100,
            ppo_epochs: 4,
            negatives: 1,
            reward_mode: RewardMode::Gumbel,
            predefined_reward: false,
            td_policy_flow: false,
            td_supervised: false,
            supervised_weight: 1.0,
            dim: 50,
            heads: 1,
            blocks: 1,
            policy_hidden: 64,
            reward_hidden: 64,
            critic_hidden: 512,
            observation_capacity: 50_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma = {} must lie in (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda = {} must lie in [0, 1]", self.gae_lambda));
        }
        if !(self.clip_eps > 0.0) {
            return bad(format!("clip_eps = {} must be positive", self.clip_eps));
        }
        if !(self.gamma_r > 0.0 && self.gamma_a > 0.0) {
            return bad("temperatures must be positive".into());
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr), ("disc_lr", self.disc_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} = {lr} must be positive"));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("window", self.window),
            ("episodes", self.episodes),
            ("dim", self.dim),
            ("heads", self.heads),
            ("policy_hidden", self.policy_hidden),
            ("reward_hidden", self.reward_hidden),
            ("critic_hidden", self.critic_hidden),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim = {} is not divisible by heads = {}", self.dim, self.heads));
        }
        Ok(())
    }
}

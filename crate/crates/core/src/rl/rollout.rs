use ndarray::ArrayView1;

use crate::encoder::{encode_state, Interaction};
use crate::env::Simulator;
use crate::error::Result;
use crate::encoder::HistoryPrefix;
use crate::policy::{sample_action, score_all};
use crate::reward::{emit_reward, Feedback, RealRecord, RewardMode};
use crate::rng::{self, Purpose};
use crate::scm::GumbelNoise;

use super::config::OptimizerKind;
use super::train::Models;
use super::{Step, Trajectory};

/// How a trained model turns a state into per-action scores. Acting adds
/// Gumbel noise to the scores and takes the argmax; ranking sorts them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActingRule {
    pub kind: OptimizerKind,
    pub gamma_a: f64,
    pub policy_flow: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scorer {
    Learned(ActingRule),
    /// Every action scores zero, so Gumbel acting is uniform.
    Uniform,
}

impl Models {
    /// `ln h` for policy-gradient agents; `Q / gamma_a` (plus `ln h` with
    /// policy flow) for the value-based agent.
    pub fn action_scores(&self, rule: ActingRule, s: ArrayView1<f64>) -> Result<Vec<f64>> {
        let enc = &self.disc.encoder;
        match rule.kind {
            OptimizerKind::Reinforce | OptimizerKind::Ppo => Ok(score_all(s, &self.policy, enc)?.log_h),
            OptimizerKind::Td => {
                let q = self.critic.q_all(s, enc.action_embeddings());
                if rule.policy_flow {
                    let lh = score_all(s, &self.policy, enc)?.log_h;
                    Ok(q.iter().zip(lh).map(|(q, l)| (q + l) / rule.gamma_a).collect())
                } else {
                    Ok(q.iter().map(|q| q / rule.gamma_a).collect())
                }
            }
        }
    }

    pub fn scores(&self, scorer: Scorer, s: ArrayView1<f64>) -> Result<Vec<f64>> {
        match scorer {
            Scorer::Learned(rule) => self.action_scores(rule, s),
            Scorer::Uniform => Ok(vec![0.0; self.disc.encoder.catalog()]),
        }
    }
}

/// Reward emitted by the head during rollouts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSource {
    pub mode: RewardMode,
    pub gamma_r: f64,
    pub predefined: bool,
}

pub(crate) fn predefined_bonus(feedback: Feedback) -> f64 {
    match feedback {
        Feedback::None => 0.0,
        Feedback::Click => 0.2,
        Feedback::Purchase => 1.0,
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub trajectory: Trajectory,
    /// Observed `(prefix, action, feedback)` records.
    pub observations: Vec<RealRecord>,
    pub total_reward: u32,
    pub length: usize,
}

/// Plays one simulator episode. `episode` keys the user; `noise_key` keys the
/// acting and reward noise streams.
pub fn rollout_episode(
    models: &Models,
    scorer: Scorer,
    sim: &Simulator,
    episode: u64,
    noise_key: u64,
    window: usize,
    reward: Option<RewardSource>,
) -> Result<Episode> {
    let enc = &models.disc.encoder;
    let mut state = sim.reset(episode);
    let mut act_rng = rng::stream(noise_key, Purpose::Rollout, &[0]);
    let mut reward_rng = rng::stream(noise_key, Purpose::Rollout, &[1]);
    let mut prefix = HistoryPrefix::empty();
    let mut trajectory = Trajectory::default();
    let mut observations = Vec::new();
    while !state.done {
        let s = encode_state(&prefix, enc)?;
        let scores = models.scores(scorer, s.view())?;
        let action = sample_action(&scores, &GumbelNoise::sample(&mut act_rng, scores.len()))?;
        let d = match reward {
            Some(src) => {
                let lp = models.disc.head.forward(s.view(), enc.action_embedding(action)).log_probs;
                let g = GumbelNoise::sample(&mut reward_rng, lp.len());
                Some(emit_reward(&lp, src.mode, &g, src.gamma_r)?)
            }
            None => None,
        };
        let step = sim.step(&mut state, action)?;
        let bonus = match reward {
            Some(src) if src.predefined => predefined_bonus(step.feedback),
            _ => 0.0,
        };
        trajectory.steps.push(Step {
            state: s,
            action,
            feedback: Some(step.feedback),
            reward: d.unwrap_or(0.0) + bonus,
            logged: None,
        });
        observations.push(RealRecord {
            prefix: prefix.clone(),
            action,
            feedback: step.feedback,
        });
        prefix = prefix.push(Interaction::new(action, step.feedback.engaged()), window);
    }
    Ok(Episode {
        trajectory,
        observations,
        total_reward: state.total_reward,
        length: state.step,
    })
}

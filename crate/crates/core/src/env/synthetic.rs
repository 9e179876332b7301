//! Logged sessions generated by rolling the simulator with a mix of the
//! scripted expert and uniform random recommendations.

use rand::Rng;

use crate::encoder::{HistoryPrefix, Interaction};
use crate::error::{Error, Result};
use crate::reward::{Feedback, RealRecord};
use crate::rng::{self, Purpose};

use super::dataset::{build_dataset, RawEvent, SessionDataset};
use super::simulator::Simulator;

/// Per-step probability that the logging policy defers to the expert.
pub const EXPERT_SHARE: f64 = 0.15;

#[derive(Debug, Clone)]
pub struct SyntheticLog {
    /// Click and purchase events only, filtered like any other session log.
    pub dataset: SessionDataset,
    /// Every logged step including passes, in simulator item ids.
    pub observations: Vec<RealRecord>,
}

/// Episode key used for logging session `index`, disjoint from training keys.
pub fn logging_episode(seed: u64, index: u64) -> u64 {
    rng::stream_seed(seed, Purpose::Synthetic, &[index, 0x6c6f67])
}

pub fn generate_synthetic_dataset(sim: &Simulator, seed: u64, sessions: usize, window: usize) -> Result<SyntheticLog> {
    if sessions == 0 {
        return Err(Error::EmptyDataset("zero sessions requested".into()));
    }
    let mut rows = Vec::new();
    let mut observations = Vec::new();
    for i in 0..sessions as u64 {
        let mut state = sim.reset(logging_episode(seed, i));
        let mut choose = rng::stream(seed, Purpose::Synthetic, &[i]);
        let mut history = HistoryPrefix::empty();
        while !state.done {
            let action = if choose.random::<f64>() < EXPERT_SHARE {
                sim.expert_action(&state)
            } else {
                choose.random_range(0..sim.catalog())
            };
            let step = sim.step(&mut state, action)?;
            observations.push(RealRecord {
                prefix: history.clone(),
                action,
                feedback: step.feedback,
            });
            if step.feedback != Feedback::None {
                rows.push(RawEvent {
                    session: i,
                    timestamp: state.step as i64,
                    item: action as u64,
                    feedback: step.feedback,
                });
            }
            history = history.push(Interaction::new(action, step.feedback.engaged()), window);
        }
    }
    Ok(SyntheticLog {
        dataset: build_dataset(&rows)?,
        observations,
    })
}

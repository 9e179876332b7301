//! Offline session logs with a replay harness, and the synthetic online
//! simulator with its logging-policy data generator.

mod dataset;
mod replay;
mod simulator;
mod synthetic;

pub use dataset::{
    build_dataset, load_sessions, parse_rows, parse_sessions, BehaviorMapping, DatasetStats, Event, RawEvent,
    Session, SessionDataset, Split, MIN_COUNT,
};
pub use replay::{replay_env_step, ReplayCursor, ReplayStep};
pub use simulator::{feedback_for_reward, SimItem, SimStep, Simulator, SimulatorConfig, SimulatorState};
pub use synthetic::{generate_synthetic_dataset, logging_episode, SyntheticLog, EXPERT_SHARE};

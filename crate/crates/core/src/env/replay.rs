//! Offline replay: walks logged sessions regardless of the proposed action.

use serde::{Deserialize, Serialize};

use crate::encoder::HistoryPrefix;
use crate::error::{Error, Result};
use crate::reward::Feedback;

use super::dataset::SessionDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayCursor {
    pub session: usize,
    /// Index of the newest event already in the history.
    pub position: usize,
}

impl ReplayCursor {
    pub fn start(session: usize) -> Self {
        Self { session, position: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStep {
    pub cursor: ReplayCursor,
    pub prefix: HistoryPrefix,
    /// The logged next item and its feedback.
    pub item: usize,
    pub feedback: Feedback,
    /// Whether `item` was the proposed action.
    pub hit: bool,
    pub done: bool,
}

pub fn replay_env_step(
    dataset: &SessionDataset,
    cursor: ReplayCursor,
    proposed: usize,
    window: usize,
) -> Result<ReplayStep> {
    let session = dataset
        .sessions
        .get(cursor.session)
        .ok_or_else(|| Error::invalid(format!("session index {} out of range", cursor.session)))?;
    let next = cursor.position + 1;
    if next >= session.events.len() {
        return Err(Error::invalid(format!(
            "cursor {} is at or past the end of session {}",
            cursor.position, session.id
        )));
    }
    let event = session.events[next];
    Ok(ReplayStep {
        cursor: ReplayCursor {
            session: cursor.session,
            position: next,
        },
        prefix: session.prefix(next, window),
        item: event.item,
        feedback: event.feedback,
        hit: proposed == event.item,
        done: next + 1 == session.events.len(),
    })
}

//! Session logs: parsing, threshold filtering, dense re-indexing, statistics
//! and the seeded train/test split.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::{HistoryPrefix, Interaction};
use crate::error::{Error, Result};
use crate::reward::{Feedback, RealRecord};
use crate::rng::{self, Purpose};

/// Minimum events per session and occurrences per item.
pub const MIN_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub timestamp: i64,
    pub item: usize,
    pub feedback: Feedback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: u64,
    pub events: Vec<Event>,
}

impl Session {
    /// Interaction prefix `events[..=cursor]`, windowed.
    pub fn prefix(&self, cursor: usize, window: usize) -> HistoryPrefix {
        let start = (cursor + 1).saturating_sub(window);
        HistoryPrefix::new(
            self.events[start..=cursor]
                .iter()
                .map(|e| Interaction::new(e.item, e.feedback.engaged()))
                .collect(),
            window,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDataset {
    pub sessions: Vec<Session>,
    /// Original id of each dense item id.
    pub item_ids: Vec<u64>,
    pub split: Vec<Split>,
}

/// `interactions` counts sessions (interaction trajectories); `events`
/// counts individual rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub interactions: usize,
    pub items: usize,
    pub clicks: usize,
    pub purchases: usize,
    pub events: usize,
}

/// Maps raw behavior tokens to feedback classes; `None` drops the row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorMapping {
    pub rules: BTreeMap<String, Option<Feedback>>,
}

impl Default for BehaviorMapping {
    fn default() -> Self {
        let mut rules = BTreeMap::new();
        for t in ["view", "click"] {
            rules.insert(t.to_string(), Some(Feedback::Click));
        }
        for t in ["addtocart", "cart", "purchase", "buy"] {
            rules.insert(t.to_string(), Some(Feedback::Purchase));
        }
        rules.insert("transaction".to_string(), None);
        Self { rules }
    }
}

impl BehaviorMapping {
    /// Parses `token=click|purchase|ignore` pairs separated by commas.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut rules = BTreeMap::new();
        for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("behavior rule `{pair}` needs `token=class`")))?;
            let class = match v.trim() {
                "click" => Some(Feedback::Click),
                "purchase" => Some(Feedback::Purchase),
                "ignore" => None,
                other => return Err(Error::Config(format!("unknown behavior class `{other}`"))),
            };
            rules.insert(k.trim().to_ascii_lowercase(), class);
        }
        if rules.is_empty() {
            return Err(Error::Config("behavior mapping is empty".into()));
        }
        Ok(Self { rules })
    }

    pub fn to_spec(&self) -> String {
        self.rules
            .iter()
            .map(|(k, v)| format!("{k}={}", v.map_or("ignore", |f| f.name())))
            .collect::<Vec<_>>()
            .join(",")
    }

    fn lookup(&self, token: &str) -> Option<Option<Feedback>> {
        self.rules.get(&token.to_ascii_lowercase()).copied()
    }
}

/// One parsed row before filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawEvent {
    pub session: u64,
    pub timestamp: i64,
    pub item: u64,
    pub feedback: Feedback,
}

pub fn parse_rows(text: &str, origin: &Path, mapping: &BehaviorMapping) -> Result<Vec<RawEvent>> {
    let mut out = Vec::new();
    let mut seen_data = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            msg,
        };
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split(',').map(str::trim).collect()
        };
        if !seen_data && fields.first().is_some_and(|f| f.parse::<u64>().is_err()) {
            // Header row.
            seen_data = true;
            continue;
        }
        seen_data = true;
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let session = fields[0].parse::<u64>().map_err(|e| err(format!("bad session id: {e}")))?;
        let timestamp = fields[1].parse::<i64>().map_err(|e| err(format!("bad timestamp: {e}")))?;
        let item = fields[2].parse::<u64>().map_err(|e| err(format!("bad item id: {e}")))?;
        let feedback = mapping
            .lookup(fields[3])
            .ok_or_else(|| err(format!("unknown behavior `{}`", fields[3])))?;
        if let Some(feedback) = feedback {
            out.push(RawEvent {
                session,
                timestamp,
                item,
                feedback,
            });
        }
    }
    Ok(out)
}

/// Groups, sorts, filters to a fixed point and re-indexes items densely.
pub fn build_dataset(rows: &[RawEvent]) -> Result<SessionDataset> {
    let mut sessions: BTreeMap<u64, Vec<(i64, usize, u64, Feedback)>> = BTreeMap::new();
    for (order, r) in rows.iter().enumerate() {
        sessions
            .entry(r.session)
            .or_default()
            .push((r.timestamp, order, r.item, r.feedback));
    }
    for events in sessions.values_mut() {
        events.sort_by_key(|e| (e.0, e.1));
    }
    loop {
        let mut counts: HashMap<u64, usize> = HashMap::new();
        for events in sessions.values() {
            for e in events {
                *counts.entry(e.2).or_default() += 1;
            }
        }
        let mut changed = false;
        for events in sessions.values_mut() {
            let before = events.len();
            events.retain(|e| counts[&e.2] >= MIN_COUNT);
            changed |= events.len() != before;
        }
        let before = sessions.len();
        sessions.retain(|_, ev| ev.len() >= MIN_COUNT);
        changed |= sessions.len() != before;
        if !changed {
            break;
        }
    }
    if sessions.is_empty() {
        return Err(Error::EmptyDataset("no session survives the minimum-count filters".into()));
    }
    let mut item_ids: Vec<u64> = sessions.values().flatten().map(|e| e.2).collect();
    item_ids.sort_unstable();
    item_ids.dedup();
    let dense: HashMap<u64, usize> = item_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let sessions: Vec<Session> = sessions
        .into_iter()
        .map(|(id, events)| Session {
            id,
            events: events
                .into_iter()
                .map(|(timestamp, _, item, feedback)| Event {
                    timestamp,
                    item: dense[&item],
                    feedback,
                })
                .collect(),
        })
        .collect();
    let split = vec![Split::Train; sessions.len()];
    Ok(SessionDataset {
        sessions,
        item_ids,
        split,
    })
}

pub fn parse_sessions(text: &str, origin: &Path, mapping: &BehaviorMapping) -> Result<SessionDataset> {
    build_dataset(&parse_rows(text, origin, mapping)?)
}

pub fn load_sessions(path: &Path, mapping: &BehaviorMapping) -> Result<SessionDataset> {
    parse_sessions(&std::fs::read_to_string(path)?, path, mapping)
}

impl SessionDataset {
    pub fn catalog(&self) -> usize {
        self.item_ids.len()
    }

    pub fn stats(&self) -> DatasetStats {
        let events = self.sessions.iter().flat_map(|s| &s.events);
        let (mut clicks, mut purchases, mut total) = (0, 0, 0);
        for e in events {
            total += 1;
            match e.feedback {
                Feedback::Click => clicks += 1,
                Feedback::Purchase => purchases += 1,
                Feedback::None => {}
            }
        }
        DatasetStats {
            interactions: self.sessions.len(),
            items: self.catalog(),
            clicks,
            purchases,
            events: total,
        }
    }

    /// Assigns a seeded `test_fraction` of sessions to the test split
    /// (at least one each when there are two or more sessions).
    pub fn with_split(mut self, seed: u64, test_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!("test fraction {test_fraction} outside [0, 1)")));
        }
        let n = self.sessions.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, Purpose::Split, &[]));
        let mut n_test = (test_fraction * n as f64).round() as usize;
        if n >= 2 && test_fraction > 0.0 {
            n_test = n_test.clamp(1, n - 1);
        }
        self.split = vec![Split::Train; n];
        for &i in &order[..n_test] {
            self.split[i] = Split::Test;
        }
        Ok(self)
    }

    pub fn sessions_in(&self, split: Split) -> impl Iterator<Item = &Session> {
        self.sessions.iter().zip(&self.split).filter(move |(_, s)| **s == split).map(|(s, _)| s)
    }

    /// Every `(prefix, next item, feedback)` step of the given split, in order.
    pub fn replay_records(&self, split: Split, window: usize) -> Vec<RealRecord> {
        self.sessions_in(split)
            .flat_map(|s| {
                (0..s.events.len() - 1).map(move |c| RealRecord {
                    prefix: s.prefix(c, window),
                    action: s.events[c + 1].item,
                    feedback: s.events[c + 1].feedback,
                })
            })
            .collect()
    }

    /// Serialized with dense item ids in the loader's own row format.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("session_id,timestamp,item_id,behavior\n");
        for s in &self.sessions {
            for e in &s.events {
                let _ = writeln!(out, "{},{},{},{}", s.id, e.timestamp, e.item, e.feedback.name());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_item_and_its_session_are_removed() {
        let text = "1,0,10,view\n1,1,10,view\n1,2,11,view\n";
        let err = parse_sessions(text, Path::new("t"), &BehaviorMapping::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
    }

    #[test]
    fn header_tabs_and_unknown_tokens() {
        let m = BehaviorMapping::default();
        let rows = parse_rows("session\tts\titem\tev\n1\t5\t2\tview\n", Path::new("t"), &m).unwrap();
        assert_eq!(rows.len(), 1);
        let e = parse_rows("1,5,2,teleport\n", Path::new("x.csv"), &m).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse_rows("1,5,2,view\n1,zz,2,view\n", Path::new("x.csv"), &m).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert_eq!(parse_rows("1,0,3,transaction\n", Path::new("t"), &m).unwrap().len(), 0);
    }

    #[test]
    fn mapping_round_trip() {
        let m = BehaviorMapping::default();
        assert_eq!(BehaviorMapping::parse(&m.to_spec()).unwrap(), m);
        assert!(BehaviorMapping::parse("view=teleport").is_err());
    }
}

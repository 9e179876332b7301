//! Ranking metrics on replay data, click-through rate on the simulator, and
//! the structured metric record shared by training and evaluation logs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::encode_state;
use crate::env::{SessionDataset, Simulator, Split};
use crate::error::{Error, Result};
use crate::policy::top_k;
use crate::reward::Feedback;
use crate::rl::{rollout_episode, Models, Scorer};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub ranked: Vec<usize>,
    pub truth: usize,
    pub feedback: Feedback,
}

fn check_records(records: &[RankingRecord], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if records.is_empty() {
        return Err(Error::invalid("no ranking records"));
    }
    if let Some(r) = records.iter().find(|r| r.ranked.len() < k) {
        return Err(Error::invalid(format!("ranked list of length {} is shorter than k = {k}", r.ranked.len())));
    }
    Ok(())
}

fn rank_of(r: &RankingRecord, k: usize) -> Option<usize> {
    r.ranked[..k].iter().position(|&i| i == r.truth).map(|p| p + 1)
}

pub fn hit_ratio_at_k(records: &[RankingRecord], k: usize) -> Result<f64> {
    check_records(records, k)?;
    let hits = records.iter().filter(|r| rank_of(r, k).is_some()).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Binary-relevance NDCG: `1 / log2(rank + 1)` for a hit, ideal DCG 1.
pub fn ndcg_at_k(records: &[RankingRecord], k: usize) -> Result<f64> {
    check_records(records, k)?;
    let total: f64 = records
        .iter()
        .filter_map(|r| rank_of(r, k))
        .map(|rank| 1.0 / ((rank + 1) as f64).log2())
        .sum();
    Ok(total / records.len() as f64)
}

/// `r_epi / (10 N_epi)`.
pub fn ctr(episode_reward: f64, episode_len: usize) -> Result<f64> {
    if episode_len == 0 {
        return Err(Error::invalid("episode length must be at least 1"));
    }
    let max = 10.0 * episode_len as f64;
    if !(0.0..=max).contains(&episode_reward) {
        return Err(Error::invalid(format!("episode reward {episode_reward} outside [0, {max}]")));
    }
    Ok(episode_reward / max)
}

/// One line of a metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: usize,
    /// Seconds since the run started; omitted unless requested so logs stay
    /// byte-reproducible.
    pub wall_clock: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub split: String,
    pub feedback: Option<String>,
}

impl MetricRecord {
    pub fn new(iteration: usize, metric: impl Into<String>, value: f64, split: &str) -> Self {
        Self {
            iteration,
            wall_clock: None,
            metric: metric.into(),
            value,
            split: split.to_string(),
            feedback: None,
        }
    }

    pub fn with_feedback(mut self, feedback: &str) -> Self {
        self.feedback = Some(feedback.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// `click`, `purchase` or `all`.
    pub feedback: String,
    pub records: usize,
    /// `(k, HR@k, NDCG@k)`.
    pub at_k: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub split: Split,
    pub classes: Vec<ClassMetrics>,
}

impl ReplayReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.feedback == name)
    }

    pub fn to_records(&self, iteration: usize) -> Vec<MetricRecord> {
        let mut out = Vec::new();
        for c in &self.classes {
            for &(k, hr, ndcg) in &c.at_k {
                out.push(MetricRecord::new(iteration, format!("hr@{k}"), hr, self.split.name()).with_feedback(&c.feedback));
                out.push(MetricRecord::new(iteration, format!("ndcg@{k}"), ndcg, self.split.name()).with_feedback(&c.feedback));
            }
        }
        out
    }
}

/// Ranks the full catalog for every replay step of `split`.
pub fn ranking_records(
    models: &Models,
    scorer: Scorer,
    dataset: &SessionDataset,
    split: Split,
    window: usize,
    depth: usize,
    seed: u64,
) -> Result<Vec<RankingRecord>> {
    let records = dataset.replay_records(split, window);
    let catalog = models.disc.encoder.catalog();
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let scores = match scorer {
                Scorer::Uniform => {
                    let mut u = rng::stream(seed, Purpose::Evaluation, &[i as u64]);
                    (0..catalog).map(|_| u.random::<f64>()).collect()
                }
                Scorer::Learned(_) => models.scores(scorer, encode_state(&r.prefix, &models.disc.encoder)?.view())?,
            };
            Ok(RankingRecord {
                ranked: top_k(&scores, depth)?,
                truth: r.action,
                feedback: r.feedback,
            })
        })
        .collect()
}

pub fn replay_report(records: &[RankingRecord], split: Split, ks: &[usize]) -> Result<ReplayReport> {
    let mut classes = Vec::new();
    for (name, filter) in [("click", Some(Feedback::Click)), ("purchase", Some(Feedback::Purchase)), ("all", None)] {
        let part: Vec<RankingRecord> = records
            .iter()
            .filter(|r| filter.is_none_or(|f| r.feedback == f))
            .cloned()
            .collect();
        if part.is_empty() {
            continue;
        }
        let at_k = ks
            .iter()
            .map(|&k| Ok((k, hit_ratio_at_k(&part, k)?, ndcg_at_k(&part, k)?)))
            .collect::<Result<Vec<_>>>()?;
        classes.push(ClassMetrics {
            feedback: name.to_string(),
            records: part.len(),
            at_k,
        });
    }
    Ok(ReplayReport { split, classes })
}

pub fn evaluate_replay(
    models: &Models,
    scorer: Scorer,
    dataset: &SessionDataset,
    split: Split,
    window: usize,
    ks: &[usize],
    seed: u64,
) -> Result<ReplayReport> {
    let depth = ks.iter().copied().max().unwrap_or(1);
    let records = ranking_records(models, scorer, dataset, split, window, depth, seed)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!("no replay steps in the {} split", split.name())));
    }
    replay_report(&records, split, ks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorReport {
    pub episodes: usize,
    pub mean_ctr: f64,
    pub std_error: f64,
    pub ctrs: Vec<f64>,
}

impl SimulatorReport {
    pub fn from_ctrs(ctrs: Vec<f64>) -> Self {
        let n = ctrs.len() as f64;
        let mean = ctrs.iter().sum::<f64>() / n;
        let var = if ctrs.len() > 1 {
            ctrs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            episodes: ctrs.len(),
            mean_ctr: mean,
            std_error: (var / n).sqrt(),
            ctrs,
        }
    }
}

/// Evaluation users and noise are keyed by `(seed, episode)`, so every policy
/// evaluated with the same seed meets the same users.
pub fn evaluation_keys(seed: u64, episode: u64) -> (u64, u64) {
    (
        rng::stream_seed(seed, Purpose::Evaluation, &[episode, 0]),
        rng::stream_seed(seed, Purpose::Evaluation, &[episode, 1]),
    )
}

pub fn evaluate_simulator(
    models: &Models,
    scorer: Scorer,
    sim: &Simulator,
    episodes: usize,
    window: usize,
    seed: u64,
) -> Result<SimulatorReport> {
    if episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    let ctrs = (0..episodes as u64)
        .map(|e| {
            let (user, noise) = evaluation_keys(seed, e);
            let ep = rollout_episode(models, scorer, sim, user, noise, window, None)?;
            ctr(ep.total_reward as f64, ep.length)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatorReport::from_ctrs(ctrs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ranked: &[usize], truth: usize) -> RankingRecord {
        RankingRecord {
            ranked: ranked.to_vec(),
            truth,
            feedback: Feedback::Click,
        }
    }

    #[test]
    fn hand_counted_fixtures() {
        let r = [
            rec(&[1, 2, 3, 4, 5], 1),
            rec(&[1, 2, 3, 4, 5], 9),
            rec(&[7, 2, 3, 4, 5], 5),
            rec(&[1, 2, 3, 4, 5], 3),
        ];
        assert_eq!(hit_ratio_at_k(&r, 5).unwrap(), 0.75);
        assert_eq!(ndcg_at_k(&[rec(&[4, 5, 6], 6)], 3).unwrap(), 0.5);
        assert_eq!(ndcg_at_k(&[rec(&[1, 2, 3, 4, 5], 1), rec(&[1, 2, 3, 4, 5], 8)], 5).unwrap(), 0.5);
        assert!(hit_ratio_at_k(&[rec(&[1], 1)], 2).is_err());
    }

    #[test]
    fn ctr_formula() {
        assert_eq!(ctr(50.0, 10).unwrap(), 0.5);
        assert_eq!(ctr(0.0, 10).unwrap(), 0.0);
        assert_eq!(ctr(100.0, 10).unwrap(), 1.0);
        assert!(ctr(101.0, 10).is_err());
        assert!(ctr(1.0, 0).is_err());
    }
}

//! Executable check of counterfactual consistency for Gumbel-max mechanisms.
//!
//! For a factual posterior `p` and a counterfactual posterior `q` over the same
//! outcome set, the factual world selects `argmax(ln p + g)` and the
//! counterfactual world `argmax(ln q + g)` on the *same* Gumbel draw `g`. The
//! property checked is
//!
//! ```text
//! q(r1)/p(r1) >= q(rk)/p(rk)   ==>   P(R_k = rk | R_1 = r1) = 0     (r1 != rk)
//! ```
//!
//! together with its contrapositive (`PN > 0` implies the ratio strictly
//! favours `rk`). Evaluating the two worlds with independent noise instead
//! breaks the property, which the contrast mode demonstrates.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::nn::log_softmax;
use crate::rng::{self, Purpose};

use super::gumbel::select_unchecked;

/// How the factual and counterfactual worlds obtain their exogenous noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCoupling {
    /// Both worlds read the same draw (the structural Gumbel-max model).
    Shared,
    /// Each world gets a fresh draw; used only as a contrast.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub factual: usize,
    pub target: usize,
    /// `ln q(r1) - ln p(r1)`.
    pub log_ratio_factual: f64,
    /// `ln q(rk) - ln p(rk)`.
    pub log_ratio_target: f64,
    pub antecedent: bool,
    /// Samples where `R_1 = factual` was realized.
    pub support: u64,
    pub pn: f64,
    pub bound: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// At least one estimable outcome pair satisfies the ratio antecedent.
    pub antecedent_holds: bool,
    /// Largest PN estimate over pairs where the antecedent holds.
    pub pn_estimate: f64,
    pub consistent: bool,
    pub violations: usize,
    /// Pairs with positive PN whose ratio does not strictly favour the target.
    pub contrapositive_failures: usize,
    /// Pairs where the antecedent fails yet PN is still zero (allowed; the
    /// implication is one-directional).
    pub converse_zero: usize,
    pub samples: usize,
    /// `joint[r1][rk]` as probabilities.
    pub joint: Vec<Vec<f64>>,
    /// `pn_table[r1][rk] = P(R_k = rk | R_1 = r1)`; NaN when `r1` never occurred.
    pub pn_table: Vec<Vec<f64>>,
    pub pairs: Vec<PairCheck>,
}

/// Tallies `counts[r1][rk]` over `samples` draws.
pub fn joint_counts<R: Rng + ?Sized>(
    factual: &[f64],
    counterfactual: &[f64],
    samples: usize,
    coupling: NoiseCoupling,
    rng: &mut R,
) -> Vec<Vec<u64>> {
    let n = factual.len();
    let mut counts = vec![vec![0u64; n]; n];
    let mut g = vec![0.0; n];
    for _ in 0..samples {
        for v in g.iter_mut() {
            *v = rng::gumbel(rng);
        }
        let r1 = select_unchecked(factual, &g);
        if coupling == NoiseCoupling::Independent {
            for v in g.iter_mut() {
                *v = rng::gumbel(rng);
            }
        }
        let rk = select_unchecked(counterfactual, &g);
        counts[r1][rk] += 1;
    }
    counts
}

/// Monte-Carlo tolerance `3 sqrt(p (1 - p) / n)` for a proportion estimated from `n` draws.
pub fn mc_bound(p: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

pub fn verify_gumbel_consistency(
    factual_logits: &[f64],
    counterfactual_logits: &[f64],
    samples: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    verify_with_coupling(factual_logits, counterfactual_logits, samples, seed, NoiseCoupling::Shared)
}

pub fn verify_with_coupling(
    factual_logits: &[f64],
    counterfactual_logits: &[f64],
    samples: usize,
    seed: u64,
    coupling: NoiseCoupling,
) -> Result<ConsistencyReport> {
    check_len("consistency logits", factual_logits.len(), counterfactual_logits.len())?;
    check_finite("factual logits", factual_logits)?;
    check_finite("counterfactual logits", counterfactual_logits)?;
    if factual_logits.len() < 2 {
        return Err(Error::invalid("consistency needs at least two outcomes"));
    }
    if samples == 0 {
        return Err(Error::invalid("consistency check needs at least one sample"));
    }
    let lp = log_softmax(factual_logits);
    let lq = log_softmax(counterfactual_logits);
    let mut rng = rng::stream(seed, Purpose::Consistency, &[]);
    let counts = joint_counts(&lp, &lq, samples, coupling, &mut rng);
    Ok(summarize(&lp, &lq, &counts, samples))
}

fn summarize(lp: &[f64], lq: &[f64], counts: &[Vec<u64>], samples: usize) -> ConsistencyReport {
    let n = lp.len();
    let joint: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| row.iter().map(|&c| c as f64 / samples as f64).collect())
        .collect();
    let support: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let pn_table: Vec<Vec<f64>> = counts
        .iter()
        .zip(&support)
        .map(|(row, &s)| {
            row.iter()
                .map(|&c| if s == 0 { f64::NAN } else { c as f64 / s as f64 })
                .collect()
        })
        .collect();

    let mut pairs = Vec::new();
    let mut violations = 0;
    let mut contrapositive_failures = 0;
    let mut converse_zero = 0;
    let mut antecedent_holds = false;
    let mut pn_estimate: f64 = 0.0;
    for r1 in 0..n {
        if support[r1] == 0 {
            continue;
        }
        for rk in 0..n {
            if rk == r1 {
                continue;
            }
            let a = lq[r1] - lp[r1];
            let b = lq[rk] - lp[rk];
            let antecedent = a >= b;
            let pn = pn_table[r1][rk];
            let bound = mc_bound(pn, support[r1]);
            let significant = pn > bound;
            let violation = antecedent && significant;
            if antecedent {
                antecedent_holds = true;
                pn_estimate = pn_estimate.max(pn);
            } else if pn == 0.0 {
                converse_zero += 1;
            }
            if violation {
                violations += 1;
            }
            if significant && !(b > a) {
                contrapositive_failures += 1;
            }
            pairs.push(PairCheck {
                factual: r1,
                target: rk,
                log_ratio_factual: a,
                log_ratio_target: b,
                antecedent,
                support: support[r1],
                pn,
                bound,
                violation,
            });
        }
    }
    ConsistencyReport {
        antecedent_holds,
        pn_estimate,
        consistent: violations == 0,
        violations,
        contrapositive_failures,
        converse_zero,
        samples,
        joint,
        pn_table,
        pairs,
    }
}

/// Aggregate over many seeded random logit pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremSuiteReport {
    pub coupling: NoiseCoupling,
    pub trials: usize,
    pub samples: usize,
    pub min_dim: usize,
    pub max_dim: usize,
    pub antecedent_pairs: usize,
    pub violations: usize,
    pub inconsistent_trials: usize,
    pub max_pn_under_antecedent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub factual: Vec<f64>,
    pub counterfactual: Vec<f64>,
}

/// Logit pair for trial `index`: dimension uniform in `[min_dim, max_dim]`,
/// entries standard normal.
pub fn random_trial(seed: u64, index: u64, min_dim: usize, max_dim: usize) -> TrialSpec {
    let mut s = rng::stream(seed, Purpose::Consistency, &[0x74_7269_616c, index]);
    let dim = s.random_range(min_dim..=max_dim);
    let factual = (0..dim).map(|_| rng::normal(&mut s)).collect();
    let counterfactual = (0..dim).map(|_| rng::normal(&mut s)).collect();
    TrialSpec {
        factual,
        counterfactual,
    }
}

/// Runs `trials` random logit pairs in parallel; each trial owns a stream
/// keyed by its index, so the result does not depend on scheduling.
pub fn verify_random_trials(
    trials: usize,
    min_dim: usize,
    max_dim: usize,
    samples: usize,
    seed: u64,
    coupling: NoiseCoupling,
) -> Result<TheoremSuiteReport> {
    if trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    if min_dim < 2 || max_dim < min_dim {
        return Err(Error::invalid("dimension range must satisfy 2 <= min <= max"));
    }
    let reports = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let t = random_trial(seed, i, min_dim, max_dim);
            verify_with_coupling(&t.factual, &t.counterfactual, samples, rng::stream_seed(seed, Purpose::Consistency, &[i]), coupling)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TheoremSuiteReport {
        coupling,
        trials,
        samples,
        min_dim,
        max_dim,
        antecedent_pairs: reports.iter().map(|r| r.pairs.iter().filter(|p| p.antecedent).count()).sum(),
        violations: reports.iter().map(|r| r.violations).sum(),
        inconsistent_trials: reports.iter().filter(|r| !r.consistent).count(),
        max_pn_under_antecedent: reports.iter().map(|r| r.pn_estimate).fold(0.0, f64::max),
    })
}

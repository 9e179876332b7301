//! Recommending agent `f_A`: scores every catalog item against the state and
//! samples with Gumbel noise over `ln h`.
//!
//! `h_i = softplus(w . relu(W_s s + W_a e_i + b))`. Selecting
//! `argmax(ln h_i + g_i)` draws item `i` with probability `h_i / sum_j h_j`,
//! which is the law used for log-likelihoods; `gamma_a` only shapes the
//! relaxed (soft) distribution vector.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{check_len, Error, Result};
use crate::nn::{argmax, fan_in_matrix, fan_in_vector, log_softplus, log_softplus_grad, log_sum_exp, outer, slice1, slice1_mut, slice2, slice2_mut, softmax, ParamSet};
use crate::scm::GumbelNoise;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub ws: Array2<f64>,
    pub wa: Array2<f64>,
    pub b: Array1<f64>,
    pub w: Array1<f64>,
}

impl PolicyParams {
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::invalid("policy sizes must be positive"));
        }
        Ok(Self {
            ws: fan_in_matrix(rng, hidden, dim, 2 * dim),
            wa: fan_in_matrix(rng, hidden, dim, 2 * dim),
            b: Array1::zeros(hidden),
            w: fan_in_vector(rng, hidden, hidden),
        })
    }

    pub fn hidden(&self) -> usize {
        self.b.len()
    }
}

impl ParamSet for PolicyParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![slice2(&self.ws), slice2(&self.wa), slice1(&self.b), slice1(&self.w)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice2_mut(&mut self.ws),
            slice2_mut(&mut self.wa),
            slice1_mut(&mut self.b),
            slice1_mut(&mut self.w),
        ]
    }
}

/// Scores of every catalog action for one state.
#[derive(Debug, Clone)]
pub struct ScoreTrace {
    state: Array1<f64>,
    /// `|A| x H` pre-activations.
    pre: Array2<f64>,
    /// Argument of the softplus per action.
    z: Vec<f64>,
    /// `ln h` per action.
    pub log_h: Vec<f64>,
}

impl ScoreTrace {
    /// `ln pi(a | s) = ln h_a - ln sum_j h_j`.
    pub fn log_policy(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.log_h);
        self.log_h.iter().map(|l| l - lse).collect()
    }
}

pub fn score_all(s: ArrayView1<f64>, policy: &PolicyParams, encoder: &EncoderParams) -> Result<ScoreTrace> {
    check_len("policy state width", s.len(), policy.ws.ncols())?;
    score_with_embeddings(s, policy, encoder.action_embeddings())
}

pub(crate) fn score_with_embeddings(
    s: ArrayView1<f64>,
    policy: &PolicyParams,
    embeddings: ArrayView2<f64>,
) -> Result<ScoreTrace> {
    let base = policy.ws.dot(&s) + &policy.b;
    let mut pre = embeddings.dot(&policy.wa.t());
    pre += &base.view().insert_axis(Axis(0));
    let z: Vec<f64> = pre.outer_iter().map(|row| row.iter().zip(&policy.w).map(|(p, w)| p.max(0.0) * w).sum()).collect();
    let log_h: Vec<f64> = z.iter().map(|&x| log_softplus(x)).collect();
    if log_h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("policy scores".into()));
    }
    Ok(ScoreTrace {
        state: s.to_owned(),
        pre,
        z,
        log_h,
    })
}

/// Positive score `h` of a single action.
pub fn score_action(s: ArrayView1<f64>, action: usize, policy: &PolicyParams, encoder: &EncoderParams) -> Result<f64> {
    if action >= encoder.catalog() {
        return Err(Error::invalid(format!("action {action} outside catalog of {}", encoder.catalog())));
    }
    Ok(score_all(s, policy, encoder)?.log_h[action].exp())
}

/// `softmax((ln h + g) / gamma_a)`.
pub fn policy_distribution(
    s: ArrayView1<f64>,
    policy: &PolicyParams,
    encoder: &EncoderParams,
    noise: &GumbelNoise,
    gamma_a: f64,
) -> Result<Vec<f64>> {
    if !(gamma_a > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {gamma_a}")));
    }
    let trace = score_all(s, policy, encoder)?;
    check_len("policy noise", noise.len(), trace.log_h.len())?;
    let z: Vec<f64> = trace.log_h.iter().zip(noise.values()).map(|(l, g)| (l + g) / gamma_a).collect();
    Ok(softmax(&z))
}

/// Accumulates into `grads` the gradient of `sum_j d_log_h[j] * ln h_j`.
pub fn log_h_backward(trace: &ScoreTrace, embeddings: ArrayView2<f64>, policy: &PolicyParams, d_log_h: &[f64], grads: &mut PolicyParams) {
    let hidden = policy.hidden();
    let mut d_pre = Array2::zeros((trace.pre.nrows(), hidden));
    let mut d_b = Array1::zeros(hidden);
    for (j, row) in trace.pre.outer_iter().enumerate() {
        if d_log_h[j] == 0.0 {
            continue;
        }
        let dz = d_log_h[j] * log_softplus_grad(trace.z[j]);
        let mut dp = d_pre.row_mut(j);
        for k in 0..hidden {
            let p = row[k];
            if p > 0.0 {
                grads.w[k] += dz * p;
                dp[k] = dz * policy.w[k];
            }
        }
        d_b += &dp;
    }
    grads.wa += &d_pre.t().dot(&embeddings);
    grads.ws += &outer(&d_b, &trace.state.view());
    grads.b += &d_b;
}

/// Accumulates `weight * grad ln pi(action | s)` into `grads`.
pub fn log_prob_backward(
    trace: &ScoreTrace,
    embeddings: ArrayView2<f64>,
    policy: &PolicyParams,
    action: usize,
    weight: f64,
    grads: &mut PolicyParams,
) {
    let pi: Vec<f64> = trace.log_policy().iter().map(|l| l.exp()).collect();
    let d: Vec<f64> = pi
        .iter()
        .enumerate()
        .map(|(j, p)| weight * ((j == action) as u8 as f64 - p))
        .collect();
    log_h_backward(trace, embeddings, policy, &d, grads);
}

/// Draws `argmax(ln h + g)`.
pub fn sample_action(log_h: &[f64], noise: &GumbelNoise) -> Result<usize> {
    check_len("policy noise", noise.len(), log_h.len())?;
    let z: Vec<f64> = log_h.iter().zip(noise.values()).map(|(l, g)| l + g).collect();
    Ok(argmax(&z))
}

/// The `k` best-scoring actions, descending, ties to the lower id.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", scores.len())));
    }
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids.truncate(k);
    Ok(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    TopK(usize),
}

/// One sampled action (as a one-element list) or the noise-free top-k ranking.
pub fn act(
    s: ArrayView1<f64>,
    policy: &PolicyParams,
    encoder: &EncoderParams,
    mode: ActMode,
    noise: Option<&GumbelNoise>,
) -> Result<Vec<usize>> {
    let trace = score_all(s, policy, encoder)?;
    match mode {
        ActMode::Sample => {
            let g = noise.ok_or_else(|| Error::invalid("sample mode needs Gumbel noise"))?;
            Ok(vec![sample_action(&trace.log_h, g)?])
        }
        ActMode::TopK(k) => top_k(&trace.log_h, k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::rng::{stream, Purpose};

    fn setup(catalog: usize) -> (EncoderParams, PolicyParams) {
        let mut rng = stream(3, Purpose::Init, &[]);
        let enc = EncoderParams::init(
            &EncoderConfig {
                catalog,
                dim: 4,
                heads: 1,
                blocks: 1,
                window: 3,
            },
            &mut rng,
        )
        .unwrap();
        (enc, PolicyParams::init(4, 6, &mut rng).unwrap())
    }

    #[test]
    fn zero_weights_score_every_action_equally() {
        let (enc, mut pol) = setup(5);
        for t in pol.tensors_mut() {
            t.fill(0.0);
        }
        let s = Array1::from(vec![1.0, -2.0, 0.5, 0.0]);
        let p = policy_distribution(s.view(), &pol, &enc, &GumbelNoise::zeros(5), 0.2).unwrap();
        for v in p {
            assert!((v - 0.2).abs() < 1e-12);
        }
        assert!((score_action(s.view(), 4, &pol, &enc).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_item_catalog() {
        let (enc, pol) = setup(1);
        let s = Array1::from(vec![0.1, 0.2, 0.3, 0.4]);
        let p = policy_distribution(s.view(), &pol, &enc, &GumbelNoise::zeros(1), 0.2).unwrap();
        assert_eq!(p, vec![1.0]);
        assert_eq!(act(s.view(), &pol, &enc, ActMode::TopK(1), None).unwrap(), vec![0]);
    }

    #[test]
    fn top_k_orders_and_validates() {
        assert_eq!(top_k(&[3.0, 2.0, 1.0, 0.0], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(top_k(&[1.0, 2.0, 2.0], 3).unwrap(), vec![1, 2, 0]);
        assert!(top_k(&[1.0], 2).is_err());
        assert!(top_k(&[1.0], 0).is_err());
    }
}

//! Reward head `f_R(s, a)`: a feed-forward network over the state and the
//! recommended item's embedding, read as a Gumbel-max mechanism over feedback
//! classes. The same head doubles as the adversarial discriminator.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_backward, encode_traced, EncoderParams, HistoryPrefix};
use crate::error::{check_finite, check_len, Error, Result};
use crate::nn::{fan_in_matrix, outer, log_sigmoid, log_softmax, log_softmax_backward, sigmoid, slice1, slice1_mut, slice2, slice2_mut, softmax, ParamSet};
use crate::scm::{gumbel_max_select, GumbelNoise};

/// Feedback classes in head-output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    None,
    Click,
    Purchase,
}

impl Feedback {
    pub const ALL: [Feedback; 3] = [Feedback::None, Feedback::Click, Feedback::Purchase];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Binary grouping: any click or purchase counts as engagement.
    pub fn engaged(self) -> bool {
        self != Feedback::None
    }

    pub fn name(self) -> &'static str {
        match self {
            Feedback::None => "none",
            Feedback::Click => "click",
            Feedback::Purchase => "purchase",
        }
    }
}

/// Index of the engaged class after [`binary_grouping`].
pub const POSITIVE: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardHead {
    pub ws: Array2<f64>,
    pub wa: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// Discriminator readout `[kappa, beta]`: `D = sigmoid(kappa * ln p(y) + beta)`.
    pub readout: Array1<f64>,
}

impl RewardHead {
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, classes: usize, rng: &mut R) -> Result<Self> {
        if classes < 2 || hidden == 0 || dim == 0 {
            return Err(Error::invalid("reward head needs >= 2 classes and positive sizes"));
        }
        Ok(Self {
            ws: fan_in_matrix(rng, hidden, dim, 2 * dim),
            wa: fan_in_matrix(rng, hidden, dim, 2 * dim),
            b1: Array1::zeros(hidden),
            w2: fan_in_matrix(rng, classes, hidden, hidden),
            b2: Array1::zeros(classes),
            readout: Array1::from(vec![1.0, 0.0]),
        })
    }

    pub fn classes(&self) -> usize {
        self.b2.len()
    }

    pub fn forward(&self, s: ArrayView1<f64>, e: ArrayView1<f64>) -> HeadTrace {
        let pre = self.ws.dot(&s) + self.wa.dot(&e) + &self.b1;
        let hidden = pre.mapv(|x| x.max(0.0));
        let logits = self.w2.dot(&hidden) + &self.b2;
        let log_probs = log_softmax(logits.as_slice().expect("contiguous"));
        HeadTrace { pre, hidden, log_probs }
    }

    /// Accumulates parameter gradients into `grads` and input gradients into
    /// `d_s` and `d_e`, given `d_logp = dL/d(ln p)`.
    pub fn backward(
        &self,
        trace: &HeadTrace,
        s: ArrayView1<f64>,
        e: ArrayView1<f64>,
        d_logp: &[f64],
        grads: &mut RewardHead,
        d_s: &mut Array1<f64>,
        d_e: &mut Array1<f64>,
    ) {
        let d_logits = Array1::from(log_softmax_backward(&trace.log_probs, d_logp));
        grads.b2 += &d_logits;
        grads.w2 += &outer(&d_logits, &trace.hidden.view());
        let mut d_pre = self.w2.t().dot(&d_logits);
        d_pre.zip_mut_with(&trace.pre, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        grads.b1 += &d_pre;
        grads.ws += &outer(&d_pre, &s);
        grads.wa += &outer(&d_pre, &e);
        *d_s += &self.ws.t().dot(&d_pre);
        *d_e += &self.wa.t().dot(&d_pre);
    }

    /// Probability the discriminator assigns to `(s, a, y)` being real.
    pub fn discriminate(&self, log_probs: &[f64], class: usize) -> f64 {
        sigmoid(self.readout[0] * log_probs[class] + self.readout[1])
    }
}

impl ParamSet for RewardHead {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            slice2(&self.ws),
            slice2(&self.wa),
            slice1(&self.b1),
            slice2(&self.w2),
            slice1(&self.b2),
            slice1(&self.readout),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice2_mut(&mut self.ws),
            slice2_mut(&mut self.wa),
            slice1_mut(&mut self.b1),
            slice2_mut(&mut self.w2),
            slice1_mut(&mut self.b2),
            slice1_mut(&mut self.readout),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct HeadTrace {
    pre: Array1<f64>,
    hidden: Array1<f64>,
    pub log_probs: Vec<f64>,
}

/// Normalized log posterior `ln P(R | s, a)` over feedback classes.
pub fn reward_logits(
    s: ArrayView1<f64>,
    action: usize,
    head: &RewardHead,
    encoder: &EncoderParams,
) -> Result<Vec<f64>> {
    if action >= encoder.catalog() {
        return Err(Error::invalid(format!("action {action} outside catalog of {}", encoder.catalog())));
    }
    check_len("state width", s.len(), head.ws.ncols())?;
    let lp = head.forward(s, encoder.action_embedding(action)).log_probs;
    check_finite("reward logits", &lp)?;
    Ok(lp)
}

/// `softmax((logits + g) / gamma)`.
pub fn gumbel_softmax_sample(logits: &[f64], noise: &GumbelNoise, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {gamma}")));
    }
    check_len("gumbel-softmax noise", logits.len(), noise.len())?;
    let z: Vec<f64> = logits.iter().zip(noise.values()).map(|(l, g)| (l + g) / gamma).collect();
    Ok(softmax(&z))
}

/// Maps `dL/d(sample)` to `dL/d(logits)` for [`gumbel_softmax_sample`].
pub fn gumbel_softmax_backward(sample: &[f64], gamma: f64, upstream: &[f64]) -> Vec<f64> {
    let dot: f64 = sample.iter().zip(upstream).map(|(y, g)| y * g).sum();
    sample.iter().zip(upstream).map(|(y, g)| y * (g - dot) / gamma).collect()
}

/// `[P(none), P(click) + P(purchase) + ...]`.
pub fn binary_grouping(r: &[f64]) -> [f64; 2] {
    [r[0], r[1..].iter().sum()]
}

/// `2 R[positive] - 0.5`, in `[-0.5, 1.5]` for a simplex input.
pub fn clipped_reward(r_tilde: &[f64], positive: usize) -> Result<f64> {
    r_tilde
        .get(positive)
        .map(|p| (2.0 * p - 0.5).clamp(-0.5, 1.5))
        .ok_or_else(|| Error::invalid(format!("positive index {positive} out of range")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Relaxed Gumbel-max sample at temperature `gamma_r`.
    Gumbel,
    /// Deterministic softmax of the head, no exogenous noise (ablation).
    Softmax,
}

/// Scalar reward emitted by the head for one `(s, a)`.
pub fn emit_reward(log_probs: &[f64], mode: RewardMode, noise: &GumbelNoise, gamma_r: f64) -> Result<f64> {
    let r = match mode {
        RewardMode::Gumbel => gumbel_softmax_sample(log_probs, noise, gamma_r)?,
        RewardMode::Softmax => log_probs.iter().map(|l| l.exp()).collect(),
    };
    clipped_reward(&binary_grouping(&r), POSITIVE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealRecord {
    pub prefix: HistoryPrefix,
    pub action: usize,
    pub feedback: Feedback,
}

/// A matched `(s, a)` whose feedback is resampled from the head with `noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRecord {
    pub prefix: HistoryPrefix,
    pub action: usize,
    pub noise: GumbelNoise,
}

#[derive(Debug, Clone, Default)]
pub struct DiscriminatorBatch {
    pub real: Vec<RealRecord>,
    pub generated: Vec<GeneratedRecord>,
}

#[derive(Debug, Clone)]
pub struct AdversarialOutput {
    /// `-(E[ln D(real)] + E[ln(1 - D(gen))])`, minimized by the discriminator step.
    pub disc_loss: f64,
    /// `E[ln(1 - D(gen))]`, the policy-facing term.
    pub gen_loss: f64,
    /// Balanced classification accuracy of `D` at threshold 0.5.
    pub accuracy: f64,
    pub grads: DiscriminatorParams,
}

/// `theta_D` together with `theta_S`: everything the discriminator step updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorParams {
    pub encoder: EncoderParams,
    pub head: RewardHead,
}

impl ParamSet for DiscriminatorParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }
}

/// Adversarial objective with gradients of `disc_loss` for the head, its
/// readout and the encoder (through both the state and the item embedding).
pub fn adversarial_losses(
    batch: &DiscriminatorBatch,
    head: &RewardHead,
    encoder: &EncoderParams,
) -> Result<AdversarialOutput> {
    if batch.real.is_empty() || batch.generated.is_empty() {
        return Err(Error::invalid("discriminator batch needs real and generated records"));
    }
    let mut head_grads = head.zeros_like();
    let mut encoder_grads = encoder.zeros_like();
    let (kappa, beta) = (head.readout[0], head.readout[1]);
    let mut term = |prefix: &HistoryPrefix, action: usize, class: Option<usize>, noise: Option<&GumbelNoise>, weight: f64, real: bool| -> Result<(f64, bool)> {
        if action >= encoder.catalog() {
            return Err(Error::invalid(format!("action {action} outside catalog")));
        }
        let trace = encode_traced(prefix, encoder)?;
        let s = trace.state();
        let e = encoder.action_embedding(action);
        let ht = head.forward(s.view(), e);
        check_finite("reward head output", &ht.log_probs)?;
        let y = match (class, noise) {
            (Some(c), _) => {
                if c >= head.classes() {
                    return Err(Error::invalid(format!("feedback class {c} out of range")));
                }
                c
            }
            (None, Some(g)) => gumbel_max_select(&ht.log_probs, g)?,
            (None, None) => unreachable!("either a class or noise is supplied"),
        };
        let z = kappa * ht.log_probs[y] + beta;
        // Real: -ln sigmoid(z); generated: -ln(1 - sigmoid(z)) = -ln sigmoid(-z).
        let (value, dz) = if real {
            (log_sigmoid(z), -(1.0 - sigmoid(z)) * weight)
        } else {
            (log_sigmoid(-z), sigmoid(z) * weight)
        };
        head_grads.readout[0] += dz * ht.log_probs[y];
        head_grads.readout[1] += dz;
        let mut d_logp = vec![0.0; head.classes()];
        d_logp[y] = dz * kappa;
        let mut d_s = Array1::zeros(s.len());
        let mut d_e = Array1::zeros(e.len());
        head.backward(&ht, s.view(), e, &d_logp, &mut head_grads, &mut d_s, &mut d_e);
        encode_backward(&trace, encoder, d_s.as_slice().expect("contiguous"), &mut encoder_grads);
        let mut row = encoder_grads.item.row_mut(action + 1);
        row += &d_e;
        Ok((value, (z > 0.0) == real))
    };

    let wr = 1.0 / batch.real.len() as f64;
    let wg = 1.0 / batch.generated.len() as f64;
    let mut real_ll = 0.0;
    let mut real_hits = 0usize;
    for r in &batch.real {
        let (v, hit) = term(&r.prefix, r.action, Some(r.feedback.index()), None, wr, true)?;
        real_ll += v;
        real_hits += hit as usize;
    }
    let mut gen_ll = 0.0;
    let mut gen_hits = 0usize;
    for g in &batch.generated {
        let (v, hit) = term(&g.prefix, g.action, None, Some(&g.noise), wg, false)?;
        gen_ll += v;
        gen_hits += hit as usize;
    }
    let real_ll = real_ll * wr;
    let gen_ll = gen_ll * wg;
    Ok(AdversarialOutput {
        disc_loss: -(real_ll + gen_ll),
        gen_loss: gen_ll,
        accuracy: 0.5 * (real_hits as f64 * wr + gen_hits as f64 * wg),
        grads: DiscriminatorParams {
            encoder: encoder_grads,
            head: head_grads,
        },
    })
}

//! Policy-gradient, temporal-difference and PPO estimators, and the
//! alternating discriminator / policy training loop.

mod config;
mod rollout;
mod train;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::critic::CriticParams;
use crate::error::{check_len, Error, Result};
use crate::nn::{log_softmax, ParamSet};
use crate::policy::{log_prob_backward, score_with_embeddings, PolicyParams};
use crate::reward::Feedback;

pub use config::{OptimizerKind, TrainConfig};
pub use rollout::{rollout_episode, ActingRule, Episode, RewardSource, Scorer};
pub use train::{train, Models, TrainEnv, TrainOutput, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: Array1<f64>,
    pub action: usize,
    /// Feedback observed in the environment, when there is one.
    pub feedback: Option<Feedback>,
    /// Discriminator reward `D^(t)`.
    pub reward: f64,
    /// The logged next item on replay data.
    pub logged: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// `V^(t) = D^(t) + gamma V^(t+1)`, with nothing beyond the last step.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::invalid("returns need a non-empty trajectory"));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// Generalized advantage estimates from TD residuals
/// `delta_t = D_t + gamma V(s_{t+1}) - V(s_t)`, with `V = 0` past the end.
pub fn gae_advantages(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::invalid("advantages need a non-empty trajectory"));
    }
    check_len("values per step", values.len(), rewards.len())?;
    let n = rewards.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// Mean clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)` and its
/// derivative with respect to each ratio.
pub fn ppo_clip_loss(ratios: &[f64], advantages: &[f64], eps: f64) -> Result<(f64, Vec<f64>)> {
    check_len("ratios and advantages", ratios.len(), advantages.len())?;
    if ratios.is_empty() {
        return Err(Error::invalid("clip objective needs at least one step"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("clip range must be positive, got {eps}")));
    }
    let n = ratios.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(ratios.len());
    for (&r, &a) in ratios.iter().zip(advantages) {
        if !(r > 0.0) {
            return Err(Error::invalid(format!("probability ratio must be positive, got {r}")));
        }
        let unclipped = r * a;
        let clipped = r.clamp(1.0 - eps, 1.0 + eps) * a;
        if unclipped <= clipped {
            total += unclipped;
            grad.push(a / n);
        } else {
            total += clipped;
            grad.push(0.0);
        }
    }
    Ok((total / n, grad))
}

/// `(1/N) sum_tau sum_t V^(t) grad ln pi(a_t | s_t)`: an ascent direction.
pub fn reinforce_gradient(
    trajectories: &[Trajectory],
    returns: &[Vec<f64>],
    policy: &PolicyParams,
    embeddings: ArrayView2<f64>,
) -> Result<PolicyParams> {
    check_len("returns per trajectory", returns.len(), trajectories.len())?;
    let mut grads = policy.zeros_like();
    if trajectories.is_empty() {
        return Ok(grads);
    }
    let w = 1.0 / trajectories.len() as f64;
    for (traj, ret) in trajectories.iter().zip(returns) {
        check_len("returns per step", ret.len(), traj.len())?;
        for (step, &v) in traj.steps.iter().zip(ret) {
            let trace = score_with_embeddings(step.state.view(), policy, embeddings)?;
            if trace.log_policy()[step.action].exp() == 0.0 {
                return Err(Error::NonFinite(format!("chosen action {} has zero probability", step.action)));
            }
            if v != 0.0 {
                log_prob_backward(&trace, embeddings, policy, step.action, v * w, &mut grads);
            }
        }
    }
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Array1<f64>,
    pub action: usize,
    pub reward: f64,
    /// `None` for a terminal transition.
    pub next_state: Option<Array1<f64>>,
}

impl Transition {
    pub fn from_trajectory(traj: &Trajectory) -> Vec<Transition> {
        traj.steps
            .iter()
            .enumerate()
            .map(|(t, s)| Transition {
                state: s.state.clone(),
                action: s.action,
                reward: s.reward,
                next_state: traj.steps.get(t + 1).map(|n| n.state.clone()),
            })
            .collect()
    }
}

/// `D + gamma max_a' Q(s', a')`, or `D` at a terminal transition.
pub fn td_targets(transitions: &[Transition], critic: &CriticParams, embeddings: ArrayView2<f64>, gamma: f64) -> Vec<f64> {
    transitions
        .iter()
        .map(|t| match &t.next_state {
            Some(next) => {
                let best = critic.q_all(next.view(), embeddings).into_iter().fold(f64::NEG_INFINITY, f64::max);
                t.reward + gamma * best
            }
            None => t.reward,
        })
        .collect()
}

/// Mean squared TD error against fixed targets, with its critic gradient.
pub fn td_loss(
    transitions: &[Transition],
    targets: &[f64],
    critic: &CriticParams,
    embeddings: ArrayView2<f64>,
) -> Result<(f64, CriticParams)> {
    check_len("targets per transition", targets.len(), transitions.len())?;
    if transitions.is_empty() {
        return Err(Error::invalid("TD loss needs at least one transition"));
    }
    let n = transitions.len() as f64;
    let mut grads = critic.zeros_like();
    let mut loss = 0.0;
    for (t, &y) in transitions.iter().zip(targets) {
        if t.action >= embeddings.nrows() {
            return Err(Error::invalid(format!("action {} outside catalog", t.action)));
        }
        let trace = critic.q_value(t.state.view(), embeddings.row(t.action));
        let err = trace.value - y;
        loss += err * err / n;
        critic.backward(&trace, 2.0 * err / n, &mut grads);
    }
    Ok((loss, grads))
}

/// One semi-gradient TD evaluation: targets from the current critic, then the
/// squared-error loss and its gradient.
pub fn td_update(
    transitions: &[Transition],
    critic: &CriticParams,
    embeddings: ArrayView2<f64>,
    gamma: f64,
) -> Result<(f64, CriticParams)> {
    let targets = td_targets(transitions, critic, embeddings, gamma);
    td_loss(transitions, &targets, critic, embeddings)
}

/// Cross-entropy of `softmax(Q(s, .))` against logged next items.
pub fn supervised_q_loss(
    samples: &[(Array1<f64>, usize)],
    critic: &CriticParams,
    embeddings: ArrayView2<f64>,
    weight: f64,
    grads: &mut CriticParams,
) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let w = weight / samples.len() as f64;
    let mut loss = 0.0;
    for (s, target) in samples {
        let (q, pre) = critic.q_all_traced(s.view(), embeddings);
        let lp = log_softmax(&q);
        loss -= w * lp[*target];
        let d_q: Vec<f64> = lp
            .iter()
            .enumerate()
            .map(|(j, l)| w * (l.exp() - (j == *target) as u8 as f64))
            .collect();
        critic.q_all_backward(s.view(), embeddings, &pre, &d_q, grads);
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_examples() {
        assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], 0.5).unwrap(), vec![1.75, 1.5, 1.0]);
        assert_eq!(discounted_returns(&[3.0, -1.0], 0.0).unwrap(), vec![3.0, -1.0]);
        assert!(discounted_returns(&[], 0.5).is_err());
    }

    #[test]
    fn ppo_hand_cases() {
        let (o, g) = ppo_clip_loss(&[1.0], &[2.0], 0.2).unwrap();
        assert_eq!((o, g[0]), (2.0, 2.0));
        let (o, g) = ppo_clip_loss(&[2.0], &[1.0], 0.2).unwrap();
        assert_eq!((o, g[0]), (1.2, 0.0));
        let (o, _) = ppo_clip_loss(&[0.5], &[-1.0], 0.2).unwrap();
        assert_eq!(o, -0.8);
        assert!(ppo_clip_loss(&[0.0], &[1.0], 0.2).is_err());
    }

    #[test]
    fn gae_endpoints() {
        let r = [0.5, -0.2, 1.0];
        let v = [0.3, 0.1, -0.4];
        let a0 = gae_advantages(&r, &v, 0.7, 0.0).unwrap();
        assert!((a0[0] - (0.5 + 0.7 * 0.1 - 0.3)).abs() < 1e-15);
        let a1 = gae_advantages(&r, &v, 0.7, 1.0).unwrap();
        let g = discounted_returns(&r, 0.7).unwrap();
        for t in 0..3 {
            assert!((a1[t] - (g[t] - v[t])).abs() < 1e-12);
        }
    }
}

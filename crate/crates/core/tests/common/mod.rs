//! Small random instances and finite-difference checks shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use ncmrec::critic::CriticParams;
use ncmrec::encoder::{encode_backward, encode_state, encode_traced, EncoderConfig, EncoderParams, HistoryPrefix, Interaction};
use ncmrec::nn::{finite_difference, relative_error, Adam, ParamSet};
use ncmrec::policy::{log_prob_backward, sample_action, score_all, PolicyParams};
use ncmrec::reward::{adversarial_losses, DiscriminatorBatch, DiscriminatorParams, Feedback, GeneratedRecord, RealRecord, RewardHead};
use ncmrec::rl::{gae_advantages, ppo_clip_loss, reinforce_gradient, td_update, Step, Trajectory, Transition};
use ncmrec::rng::{normal, stream, Purpose, Stream};
use ncmrec::scm::GumbelNoise;
use ndarray::{Array1, Array2};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub const CATALOG: usize = 7;
pub const DIM: usize = 4;
pub const WINDOW: usize = 5;

pub fn rng(seed: u64, key: u64) -> Stream {
    stream(seed, Purpose::Exogenous, &[0x7465_7374, key])
}

pub fn normals(r: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(r)).collect()
}

/// Instances whose ReLU pre-activations (or Gumbel-max gaps) lie closer than
/// this to a kink are redrawn before finite differencing.
pub const KINK_MARGIN: f64 = 1e-3;

fn attempt_key(key: u64, attempt: u64) -> u64 {
    key | (attempt << 32)
}

fn first_smooth<T>(seed: u64, build: impl Fn(u64) -> (T, f64)) -> T {
    for attempt in 0..1000 {
        let (t, margin) = build(attempt);
        if margin >= KINK_MARGIN {
            return t;
        }
    }
    panic!("no instance away from kinks for seed {seed}");
}

fn margin_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn encoder_attempt(seed: u64, attempt: u64, heads: usize, blocks: usize) -> EncoderParams {
    let cfg = EncoderConfig {
        catalog: CATALOG,
        dim: DIM,
        heads,
        blocks,
        window: WINDOW,
    };
    let mut r = rng(seed, attempt_key(1, attempt));
    let mut p = EncoderParams::init(&cfg, &mut r).unwrap();
    for v in p.item.iter_mut().chain(p.feedback.iter_mut()).chain(p.position.iter_mut()) {
        *v = normal(&mut r);
    }
    p
}

/// Encoder with unit-scale embeddings, so attention is far from uniform.
pub fn encoder(seed: u64, heads: usize, blocks: usize) -> EncoderParams {
    encoder_attempt(seed, 0, heads, blocks)
}

pub fn prefix(r: &mut Stream, min_len: usize, max_len: usize) -> HistoryPrefix {
    let len = r.random_range(min_len..=max_len);
    let items = (0..len)
        .map(|_| Interaction::new(r.random_range(0..CATALOG), r.random::<bool>()))
        .collect();
    HistoryPrefix::new(items, WINDOW)
}

/// Relative error of the encoder backward pass for a random linear loss on the state.
pub fn encoder_gradient_error(seed: u64) -> f64 {
    let (p, pre, c) = first_smooth(seed, |attempt| {
        let p = encoder_attempt(seed, attempt, 2, 2);
        let mut r = rng(seed, attempt_key(2, attempt));
        let pre = prefix(&mut r, 1, WINDOW);
        let c = normals(&mut r, DIM);
        let margin = encode_traced(&pre, &p).unwrap().relu_margin();
        ((p, pre, c), margin)
    });
    let loss = |q: &EncoderParams| -> f64 { encode_state(&pre, q).unwrap().iter().zip(&c).map(|(s, c)| s * c).sum() };
    let mut g = p.zeros_like();
    encode_backward(&encode_traced(&pre, &p).unwrap(), &p, &c, &mut g);
    relative_error(&g.flatten(), &finite_difference(&p, FD_STEP, loss))
}

fn discriminator_attempt(seed: u64, attempt: u64) -> DiscriminatorParams {
    let enc = encoder_attempt(seed, attempt, 2, 1);
    let mut r = rng(seed, attempt_key(3, attempt));
    let mut head = RewardHead::init(DIM, 6, Feedback::COUNT, &mut r).unwrap();
    head.readout[0] = 1.0 + 0.5 * normal(&mut r);
    head.readout[1] = 0.3 * normal(&mut r);
    DiscriminatorParams { encoder: enc, head }
}

pub fn discriminator(seed: u64) -> DiscriminatorParams {
    discriminator_attempt(seed, 0)
}

fn batch_attempt(seed: u64, attempt: u64) -> DiscriminatorBatch {
    let mut r = rng(seed, attempt_key(4, attempt));
    let real = (0..3)
        .map(|_| RealRecord {
            prefix: prefix(&mut r, 0, WINDOW),
            action: r.random_range(0..CATALOG),
            feedback: Feedback::from_index(r.random_range(0..Feedback::COUNT)).unwrap(),
        })
        .collect();
    let generated = (0..3)
        .map(|_| GeneratedRecord {
            prefix: prefix(&mut r, 0, WINDOW),
            action: r.random_range(0..CATALOG),
            noise: GumbelNoise::sample(&mut r, Feedback::COUNT),
        })
        .collect();
    DiscriminatorBatch { real, generated }
}

pub fn discriminator_batch(seed: u64) -> DiscriminatorBatch {
    batch_attempt(seed, 0)
}

/// Distance of `(prefix, action)` from the nearest kink of the discriminator.
fn record_margin(params: &DiscriminatorParams, pre: &HistoryPrefix, action: usize, noise: Option<&GumbelNoise>) -> f64 {
    let trace = encode_traced(pre, &params.encoder).unwrap();
    let s = trace.state();
    let e = params.encoder.action_embedding(action);
    let h = &params.head;
    let z = h.ws.dot(&s) + h.wa.dot(&e) + &h.b1;
    let mut m = trace.relu_margin().min(margin_of(z.iter().copied()));
    if let Some(g) = noise {
        let lp = h.forward(s.view(), e).log_probs;
        let mut perturbed: Vec<f64> = lp.iter().zip(g.values()).map(|(l, g)| l + g).collect();
        perturbed.sort_by(|a, b| b.total_cmp(a));
        m = m.min(perturbed[0] - perturbed[1]);
    }
    m
}

/// Relative error of the adversarial loss gradient over encoder, head and readout.
pub fn reward_gradient_error(seed: u64) -> f64 {
    let (params, batch) = first_smooth(seed, |attempt| {
        let params = discriminator_attempt(seed, attempt);
        let batch = batch_attempt(seed, attempt);
        let margin = batch
            .real
            .iter()
            .map(|r| record_margin(&params, &r.prefix, r.action, None))
            .chain(batch.generated.iter().map(|g| record_margin(&params, &g.prefix, g.action, Some(&g.noise))))
            .fold(f64::INFINITY, f64::min);
        ((params, batch), margin)
    });
    let analytic = adversarial_losses(&batch, &params.head, &params.encoder).unwrap().grads;
    let fd = finite_difference(&params, FD_STEP, |q: &DiscriminatorParams| {
        adversarial_losses(&batch, &q.head, &q.encoder).unwrap().disc_loss
    });
    relative_error(&analytic.flatten(), &fd)
}

pub fn policy(seed: u64, hidden: usize) -> PolicyParams {
    PolicyParams::init(DIM, hidden, &mut rng(seed, 5)).unwrap()
}

/// Relative error of `grad ln pi(a | s)` for a random state and action.
pub fn policy_gradient_error(seed: u64) -> f64 {
    let (enc, pol, s, a) = first_smooth(seed, |attempt| {
        let enc = encoder_attempt(seed, attempt, 1, 1);
        let mut pol = PolicyParams::init(DIM, 8, &mut rng(seed, attempt_key(5, attempt))).unwrap();
        let mut r = rng(seed, attempt_key(6, attempt));
        for v in pol.b.iter_mut() {
            *v = 0.5 * normal(&mut r);
        }
        let s = Array1::from(normals(&mut r, DIM));
        let a = r.random_range(0..CATALOG);
        let pre = enc.action_embeddings().dot(&pol.wa.t()) + &(pol.ws.dot(&s) + &pol.b);
        let margin = margin_of(pre.iter().copied());
        ((enc, pol, s, a), margin)
    });
    let trace = score_all(s.view(), &pol, &enc).unwrap();
    let mut g = pol.zeros_like();
    log_prob_backward(&trace, enc.action_embeddings(), &pol, a, 1.0, &mut g);
    let fd = finite_difference(&pol, FD_STEP, |q: &PolicyParams| score_all(s.view(), q, &enc).unwrap().log_policy()[a]);
    relative_error(&g.flatten(), &fd)
}

/// Relative error for a random combination of `Q(s, .)` over the catalog,
/// one `Q(s, e)` and the baseline `V(s)`.
pub fn critic_gradient_error(seed: u64) -> f64 {
    let (enc, critic, s, e, cq, cv, ce) = first_smooth(seed, |attempt| {
        let enc = encoder_attempt(seed, attempt, 1, 1);
        let mut r = rng(seed, attempt_key(7, attempt));
        let mut critic = CriticParams::init(DIM, 8, &mut r).unwrap();
        for v in critic.b.iter_mut() {
            *v = 0.5 * normal(&mut r);
        }
        let s = Array1::from(normals(&mut r, DIM));
        let e = Array1::from(normals(&mut r, DIM));
        let cq = normals(&mut r, CATALOG);
        let (cv, ce) = (normal(&mut r), normal(&mut r));
        let base = critic.ws.dot(&s) + &critic.b;
        let (_, pre) = critic.q_all_traced(s.view(), enc.action_embeddings());
        let single = &base + &critic.wa.dot(&e);
        let margin = margin_of(pre.iter().chain(base.iter()).chain(single.iter()).copied());
        ((enc, critic, s, e, cq, cv, ce), margin)
    });
    let emb = enc.action_embeddings();
    let loss = |q: &CriticParams| -> f64 {
        let all: f64 = q.q_all(s.view(), emb).iter().zip(&cq).map(|(q, c)| q * c).sum();
        all + cv * q.state_value(s.view()).value + ce * q.q_value(s.view(), e.view()).value
    };
    let mut g = critic.zeros_like();
    let (_, pre) = critic.q_all_traced(s.view(), emb);
    critic.q_all_backward(s.view(), emb, &pre, &cq, &mut g);
    critic.backward(&critic.state_value(s.view()), cv, &mut g);
    critic.backward(&critic.q_value(s.view(), e.view()), ce, &mut g);
    relative_error(&g.flatten(), &finite_difference(&critic, FD_STEP, loss))
}

/// Returns the earliest prefix position whose encoding changes when a later
/// token is replaced, over every layer; `None` means the mask held exactly.
pub fn causal_leak(seed: u64) -> Option<(usize, usize)> {
    let p = encoder(seed, 2, 2);
    let mut r = rng(seed, 8);
    let base = prefix(&mut r, 2, WINDOW);
    let t = r.random_range(1..base.len());
    let mut items = base.items().to_vec();
    let old = items[t];
    items[t] = Interaction::new((old.item + r.random_range(1..CATALOG)) % CATALOG, !old.engaged);
    let changed = HistoryPrefix::new(items, WINDOW);
    let a = ncmrec::encoder::encode_layers(&base, &p).unwrap();
    let b = ncmrec::encoder::encode_layers(&changed, &p).unwrap();
    for (la, lb) in a.iter().zip(&b) {
        for i in 0..t {
            if la.row(i) != lb.row(i) {
                return Some((t, i));
            }
        }
    }
    None
}

pub fn one_hot(len: usize, i: usize) -> Array1<f64> {
    let mut v = Array1::zeros(len);
    v[i] = 1.0;
    v
}

/// Largest `|Q_max(s) - V*(s)|` after TD training on a three-state chain with
/// one-hot states: "advance" pays `[0, 0, 1]` and moves right (terminal after
/// the last state); "quit" pays 0.3 and terminates.
pub fn td_chain_error() -> f64 {
    let gamma = 0.9;
    let advance = [0.0, 0.0, 1.0];
    let quit = 0.3;
    let mut v_star = [0.0f64; 3];
    for _ in 0..100 {
        for s in (0..3).rev() {
            let next = if s < 2 { v_star[s + 1] } else { 0.0 };
            v_star[s] = (advance[s] + gamma * next).max(quit);
        }
    }
    let mut emb = Array2::zeros((2, 3));
    emb[[0, 0]] = 1.0;
    emb[[1, 1]] = 1.0;
    let mut transitions = Vec::new();
    for s in 0..3 {
        transitions.push(Transition {
            state: one_hot(3, s),
            action: 0,
            reward: advance[s],
            next_state: (s < 2).then(|| one_hot(3, s + 1)),
        });
        transitions.push(Transition {
            state: one_hot(3, s),
            action: 1,
            reward: quit,
            next_state: None,
        });
    }
    let mut critic = CriticParams::init(3, 32, &mut rng(0, 52)).unwrap();
    let mut opt = Adam::new(1e-2);
    for i in 0..5000 {
        if i == 3000 {
            opt.lr = 1e-3;
        }
        let (_, g) = td_update(&transitions, &critic, emb.view(), gamma).unwrap();
        opt.step(&mut critic, &g);
    }
    (0..3)
        .map(|s| {
            let v = critic.q_all(one_hot(3, s).view(), emb.view()).into_iter().fold(f64::NEG_INFINITY, f64::max);
            (v - v_star[s]).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest gap between GAE and the explicit double sum over random length-5
/// trajectories.
pub fn gae_max_error(seeds: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut r = rng(seed, 50);
        let rewards = normals(&mut r, 5);
        let values = normals(&mut r, 5);
        let (gamma, lambda) = (0.7, 0.97);
        let v = |t: usize| if t < 5 { values[t] } else { 0.0 };
        let delta = |t: usize| rewards[t] + gamma * v(t + 1) - v(t);
        let got = gae_advantages(&rewards, &values, gamma, lambda).unwrap();
        for t in 0..5 {
            let want: f64 = (0..5 - t).map(|l| (gamma * lambda).powi(l as i32) * delta(t + l)).sum();
            worst = worst.max((got[t] - want).abs());
        }
    }
    worst
}

/// `(ratio, advantage, objective, d objective / d ratio)` at `eps = 0.2`.
pub const PPO_CASES: [(f64, f64, f64, f64); 6] = [
    (1.0, 2.0, 2.0, 2.0),
    (1.5, 1.0, 1.2, 0.0),
    (0.5, 1.0, 0.5, 1.0),
    (1.5, -1.0, -1.5, -1.0),
    (0.5, -1.0, -0.8, 0.0),
    (1.1, -2.0, -2.2, -2.0),
];

/// Hand cases whose clipped objective or ratio derivative differs.
pub fn ppo_case_mismatches() -> Vec<(f64, f64)> {
    PPO_CASES
        .iter()
        .filter(|&&(r, a, obj, d)| {
            let (o, g) = ppo_clip_loss(&[r], &[a], 0.2).unwrap();
            (o - obj).abs() > 1e-15 || g[0] != d
        })
        .map(|&(r, a, _, _)| (r, a))
        .collect()
}

pub fn bandit_encoder(catalog: usize, seed: u64) -> EncoderParams {
    let mut r = rng(seed, 54);
    let mut enc = EncoderParams::init(
        &EncoderConfig {
            catalog,
            dim: 4,
            heads: 1,
            blocks: 1,
            window: 2,
        },
        &mut r,
    )
    .unwrap();
    for v in enc.item.iter_mut() {
        *v = normal(&mut r);
    }
    enc
}

pub fn step(state: &Array1<f64>, action: usize, reward: f64) -> Step {
    Step {
        state: state.clone(),
        action,
        feedback: None,
        reward,
        logged: None,
    }
}

/// REINFORCE on a two-armed bandit paying (1, 0); returns the first step at
/// which `P(arm 0) >= 0.99`, if any within `max_steps`.
pub fn bandit_steps_to_best_arm(max_steps: usize) -> Option<usize> {
    let enc = bandit_encoder(2, 0);
    let mut pol = PolicyParams::init(4, 16, &mut rng(0, 55)).unwrap();
    let s = Array1::from(vec![1.0, 0.0, 0.0, 0.0]);
    let mut opt = Adam::new(0.05);
    let mut r = rng(0, 56);
    for t in 0..max_steps {
        let lp = score_all(s.view(), &pol, &enc).unwrap().log_policy();
        if lp[0].exp() >= 0.99 {
            return Some(t);
        }
        let a = sample_action(&lp, &GumbelNoise::sample(&mut r, 2)).unwrap();
        let reward = if a == 0 { 1.0 } else { 0.0 };
        let traj = Trajectory {
            steps: vec![step(&s, a, reward)],
        };
        let mut g = reinforce_gradient(&[traj], &[vec![reward]], &pol, enc.action_embeddings()).unwrap();
        g.scale(-1.0);
        opt.step(&mut pol, &g);
    }
    None
}

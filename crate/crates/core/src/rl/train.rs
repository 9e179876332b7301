use std::collections::VecDeque;

use ndarray::{Array1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critic::CriticParams;
use crate::encoder::{encode_state, EncoderConfig, EncoderParams};
use crate::env::{SessionDataset, Simulator, Split};
use crate::error::{Error, Result};
use crate::eval::{ctr, MetricRecord};
use crate::nn::{Adam, ParamSet};
use crate::policy::{log_h_backward, log_prob_backward, sample_action, score_with_embeddings, PolicyParams};
use crate::reward::{adversarial_losses, emit_reward, DiscriminatorBatch, DiscriminatorParams, Feedback, GeneratedRecord, RealRecord, RewardHead};
use crate::rng::{self, Purpose};
use crate::scm::GumbelNoise;

use super::config::{OptimizerKind, TrainConfig};
use super::rollout::{rollout_episode, ActingRule, RewardSource, Scorer};
use super::{discounted_returns, gae_advantages, ppo_clip_loss, reinforce_gradient, supervised_q_loss, td_loss, Step, Trajectory, Transition};

/// Every trainable parameter of the recommender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Models {
    /// State encoder and reward head (with discriminator readout).
    pub disc: DiscriminatorParams,
    pub policy: PolicyParams,
    pub critic: CriticParams,
}

impl Models {
    pub fn init(config: &TrainConfig, catalog: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.seed, Purpose::Init, &[]);
        let encoder = EncoderParams::init(
            &EncoderConfig {
                catalog,
                dim: config.dim,
                heads: config.heads,
                blocks: config.blocks,
                window: config.window,
            },
            &mut rng,
        )?;
        let head = RewardHead::init(config.dim, config.reward_hidden, Feedback::COUNT, &mut rng)?;
        let policy = PolicyParams::init(config.dim, config.policy_hidden, &mut rng)?;
        let critic = CriticParams::init(config.dim, config.critic_hidden, &mut rng)?;
        Ok(Self {
            disc: DiscriminatorParams { encoder, head },
            policy,
            critic,
        })
    }

    pub fn catalog(&self) -> usize {
        self.disc.encoder.catalog()
    }

    pub fn all_finite(&self) -> bool {
        self.disc.all_finite() && self.policy.all_finite() && self.critic.all_finite()
    }
}

pub enum TrainEnv<'a> {
    /// Offline: logged sessions; the `train` split feeds both loops.
    Replay { dataset: &'a SessionDataset },
    /// Online: the simulator plus logged observations seeding the
    /// discriminator pool.
    Simulator {
        sim: &'a Simulator,
        observations: &'a [RealRecord],
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub models: Models,
    pub log: Vec<MetricRecord>,
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub kind: OptimizerKind,
    pub models: Models,
    env: TrainEnv<'a>,
    disc_opt: Adam,
    actor_opt: Adam,
    critic_opt: Adam,
    pool: VecDeque<RealRecord>,
    train_sessions: Vec<usize>,
    iteration: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, kind: OptimizerKind, env: TrainEnv<'a>, models: Models) -> Result<Self> {
        config.validate()?;
        let (pool, train_sessions, catalog) = match &env {
            TrainEnv::Replay { dataset } => {
                let pool: VecDeque<RealRecord> = dataset.replay_records(Split::Train, config.window).into();
                let sessions: Vec<usize> = (0..dataset.sessions.len()).filter(|&i| dataset.split[i] == Split::Train).collect();
                (pool, sessions, dataset.catalog())
            }
            TrainEnv::Simulator { sim, observations } => {
                let skip = observations.len().saturating_sub(config.observation_capacity);
                (observations[skip..].iter().cloned().collect(), Vec::new(), sim.catalog())
            }
        };
        if models.catalog() != catalog {
            return Err(Error::invalid(format!(
                "model catalog {} does not match environment catalog {catalog}",
                models.catalog()
            )));
        }
        if pool.is_empty() {
            return Err(Error::EmptyDataset("no observational records for the discriminator".into()));
        }
        Ok(Self {
            disc_opt: Adam::new(config.disc_lr),
            actor_opt: Adam::new(config.actor_lr),
            critic_opt: Adam::new(config.critic_lr),
            config,
            kind,
            models,
            env,
            pool,
            train_sessions,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn acting_rule(&self) -> ActingRule {
        ActingRule {
            kind: self.kind,
            gamma_a: self.config.gamma_a,
            policy_flow: self.config.td_policy_flow,
        }
    }

    fn reward_source(&self) -> RewardSource {
        RewardSource {
            mode: self.config.reward_mode,
            gamma_r: self.config.gamma_r,
            predefined: self.config.predefined_reward,
        }
    }

    /// Runs one outer iteration: discriminator steps, then policy steps.
    pub fn run_iteration(&mut self) -> Result<Vec<MetricRecord>> {
        let it = self.iteration + 1;
        let mut log = Vec::new();
        let (mut dl, mut gl, mut acc) = (0.0, 0.0, 0.0);
        for k in 0..self.config.disc_steps {
            let (d, g, a) = self.discriminator_step(it as u64, k as u64)?;
            dl += d;
            gl += g;
            acc += a;
        }
        if self.config.disc_steps > 0 {
            let n = self.config.disc_steps as f64;
            log.push(MetricRecord::new(it, "disc_loss", dl / n, "train"));
            log.push(MetricRecord::new(it, "gen_loss", gl / n, "train"));
            log.push(MetricRecord::new(it, "disc_accuracy", acc / n, "train"));
        }
        for k in 0..self.config.policy_steps {
            log.extend(self.policy_step(it, k as u64)?);
        }
        if !self.models.all_finite() {
            return Err(Error::NonFinite(format!("parameters after iteration {it}")));
        }
        self.iteration = it;
        Ok(log)
    }

    fn discriminator_step(&mut self, it: u64, k: u64) -> Result<(f64, f64, f64)> {
        let cfg = &self.config;
        let mut mb = rng::stream(cfg.seed, Purpose::Minibatch, &[it, k]);
        let mut noise = rng::stream(cfg.seed, Purpose::Discriminator, &[it, k]);
        let catalog = self.models.catalog();
        let negatives = if matches!(self.env, TrainEnv::Replay { .. }) { cfg.negatives } else { 0 };
        let mut batch = DiscriminatorBatch::default();
        for _ in 0..cfg.batch_size {
            let r = &self.pool[mb.random_range(0..self.pool.len())];
            batch.real.push(r.clone());
            for _ in 0..negatives {
                batch.real.push(RealRecord {
                    prefix: r.prefix.clone(),
                    action: mb.random_range(0..catalog),
                    feedback: Feedback::None,
                });
            }
        }
        batch.generated = batch
            .real
            .iter()
            .map(|r| GeneratedRecord {
                prefix: r.prefix.clone(),
                action: r.action,
                noise: GumbelNoise::sample(&mut noise, Feedback::COUNT),
            })
            .collect();
        let out = adversarial_losses(&batch, &self.models.disc.head, &self.models.disc.encoder)?;
        self.disc_opt.step(&mut self.models.disc, &out.grads);
        Ok((out.disc_loss, out.gen_loss, out.accuracy))
    }

    fn collect(&mut self, it: usize, k: u64) -> Result<(Vec<Trajectory>, Vec<MetricRecord>)> {
        let cfg = &self.config;
        let rule = Scorer::Learned(self.acting_rule());
        let mut log = Vec::new();
        let mut trajectories = Vec::with_capacity(cfg.episodes);
        match &self.env {
            TrainEnv::Simulator { sim, .. } => {
                let mut ctrs = 0.0;
                let mut fresh = Vec::new();
                for ep in 0..cfg.episodes as u64 {
                    let user = rng::stream_seed(cfg.seed, Purpose::Rollout, &[it as u64, k, ep, 0]);
                    let key = rng::stream_seed(cfg.seed, Purpose::Rollout, &[it as u64, k, ep, 1]);
                    let e = rollout_episode(&self.models, rule, sim, user, key, cfg.window, Some(self.reward_source()))?;
                    ctrs += ctr(e.total_reward as f64, e.length)?;
                    fresh.extend(e.observations);
                    trajectories.push(e.trajectory);
                }
                for r in fresh {
                    if self.pool.len() == cfg.observation_capacity {
                        self.pool.pop_front();
                    }
                    self.pool.push_back(r);
                }
                log.push(MetricRecord::new(it, "ctr", ctrs / cfg.episodes as f64, "train"));
            }
            TrainEnv::Replay { dataset } => {
                let mut mb = rng::stream(cfg.seed, Purpose::Minibatch, &[it as u64, k, 1]);
                let src = self.reward_source();
                let enc = &self.models.disc.encoder;
                for ep in 0..cfg.episodes as u64 {
                    let session = &dataset.sessions[self.train_sessions[mb.random_range(0..self.train_sessions.len())]];
                    let mut act = rng::stream(cfg.seed, Purpose::Rollout, &[it as u64, k, ep, 0]);
                    let mut rew = rng::stream(cfg.seed, Purpose::Rollout, &[it as u64, k, ep, 1]);
                    let mut traj = Trajectory::default();
                    for c in 0..session.events.len() - 1 {
                        let s = encode_state(&session.prefix(c, cfg.window), enc)?;
                        let scores = self.models.scores(rule, s.view())?;
                        let action = sample_action(&scores, &GumbelNoise::sample(&mut act, scores.len()))?;
                        let lp = self.models.disc.head.forward(s.view(), enc.action_embedding(action)).log_probs;
                        let d = emit_reward(&lp, src.mode, &GumbelNoise::sample(&mut rew, lp.len()), src.gamma_r)?;
                        traj.steps.push(Step {
                            state: s,
                            action,
                            feedback: None,
                            reward: d,
                            logged: Some(session.events[c + 1].item),
                        });
                    }
                    trajectories.push(traj);
                }
            }
        }
        let steps: usize = trajectories.iter().map(Trajectory::len).sum();
        let total: f64 = trajectories.iter().flat_map(|t| t.steps.iter().map(|s| s.reward)).sum();
        log.push(MetricRecord::new(it, "mean_reward", total / steps.max(1) as f64, "train"));
        Ok((trajectories, log))
    }

    fn policy_step(&mut self, it: usize, k: u64) -> Result<Vec<MetricRecord>> {
        let (trajectories, mut log) = self.collect(it, k)?;
        let trajectories: Vec<Trajectory> = trajectories.into_iter().filter(|t| !t.is_empty()).collect();
        if trajectories.is_empty() {
            return Ok(log);
        }
        let emb = self.models.disc.encoder.action_embeddings().to_owned();
        let emb = emb.view();
        match self.kind {
            OptimizerKind::Reinforce => {
                let returns = trajectories
                    .iter()
                    .map(|t| discounted_returns(&t.rewards(), self.config.gamma))
                    .collect::<Result<Vec<_>>>()?;
                let mut g = reinforce_gradient(&trajectories, &returns, &self.models.policy, emb)?;
                g.scale(-1.0);
                self.actor_opt.step(&mut self.models.policy, &g);
            }
            OptimizerKind::Ppo => log.extend(self.ppo_update(it, &trajectories, emb)?),
            OptimizerKind::Td => log.extend(self.td_step(it, &trajectories, emb)?),
        }
        Ok(log)
    }

    fn ppo_update(&mut self, it: usize, trajectories: &[Trajectory], emb: ArrayView2<f64>) -> Result<Vec<MetricRecord>> {
        let cfg = &self.config;
        let mut steps: Vec<&Step> = Vec::new();
        let mut advantages = Vec::new();
        let mut targets = Vec::new();
        for t in trajectories {
            let values: Vec<f64> = t.steps.iter().map(|s| self.models.critic.state_value(s.state.view()).value).collect();
            let adv = gae_advantages(&t.rewards(), &values, cfg.gamma, cfg.gae_lambda)?;
            for ((s, a), v) in t.steps.iter().zip(&adv).zip(&values) {
                steps.push(s);
                advantages.push(*a);
                targets.push(a + v);
            }
        }
        let old: Vec<f64> = steps
            .iter()
            .map(|s| Ok(score_with_embeddings(s.state.view(), &self.models.policy, emb)?.log_policy()[s.action]))
            .collect::<Result<_>>()?;
        let n = steps.len() as f64;
        let (mut objective, mut critic_loss) = (0.0, 0.0);
        for _ in 0..cfg.ppo_epochs.max(1) {
            let traces = steps
                .iter()
                .map(|s| score_with_embeddings(s.state.view(), &self.models.policy, emb))
                .collect::<Result<Vec<_>>>()?;
            let ratios: Vec<f64> = traces
                .iter()
                .zip(&steps)
                .zip(&old)
                .map(|((tr, s), lo)| (tr.log_policy()[s.action] - lo).exp())
                .collect();
            let (obj, d_ratio) = ppo_clip_loss(&ratios, &advantages, cfg.clip_eps)?;
            objective = obj;
            let mut g = self.models.policy.zeros_like();
            for ((tr, s), (r, dr)) in traces.iter().zip(&steps).zip(ratios.iter().zip(&d_ratio)) {
                if *dr != 0.0 {
                    // d ratio / d theta = ratio * grad ln pi; negate for descent.
                    log_prob_backward(tr, emb, &self.models.policy, s.action, -dr * r, &mut g);
                }
            }
            self.actor_opt.step(&mut self.models.policy, &g);

            let mut cg = self.models.critic.zeros_like();
            critic_loss = 0.0;
            for (s, y) in steps.iter().zip(&targets) {
                let tr = self.models.critic.state_value(s.state.view());
                let err = tr.value - y;
                critic_loss += err * err / n;
                self.models.critic.backward(&tr, 2.0 * err / n, &mut cg);
            }
            self.critic_opt.step(&mut self.models.critic, &cg);
        }
        Ok(vec![
            MetricRecord::new(it, "ppo_objective", objective, "train"),
            MetricRecord::new(it, "critic_loss", critic_loss, "train"),
        ])
    }

    fn td_step(&mut self, it: usize, trajectories: &[Trajectory], emb: ArrayView2<f64>) -> Result<Vec<MetricRecord>> {
        let cfg = &self.config;
        let transitions: Vec<Transition> = trajectories.iter().flat_map(Transition::from_trajectory).collect();
        let flow = cfg.td_policy_flow;
        let value_of = |models: &Models, s: &Array1<f64>| -> Result<Vec<f64>> {
            let q = models.critic.q_all(s.view(), emb);
            if flow {
                let lh = score_with_embeddings(s.view(), &models.policy, emb)?.log_h;
                Ok(q.iter().zip(lh).map(|(q, l)| q + l).collect())
            } else {
                Ok(q)
            }
        };
        let targets = transitions
            .iter()
            .map(|t| {
                Ok(match &t.next_state {
                    Some(next) => {
                        t.reward + cfg.gamma * value_of(&self.models, next)?.into_iter().fold(f64::NEG_INFINITY, f64::max)
                    }
                    None => t.reward,
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mut loss, mut cg) = if flow {
            let n = transitions.len() as f64;
            let mut cg = self.models.critic.zeros_like();
            let mut pg = self.models.policy.zeros_like();
            let mut loss = 0.0;
            for (t, y) in transitions.iter().zip(&targets) {
                let ct = self.models.critic.q_value(t.state.view(), emb.row(t.action));
                let st = score_with_embeddings(t.state.view(), &self.models.policy, emb)?;
                let err = ct.value + st.log_h[t.action] - y;
                loss += err * err / n;
                self.models.critic.backward(&ct, 2.0 * err / n, &mut cg);
                let mut d = vec![0.0; st.log_h.len()];
                d[t.action] = 2.0 * err / n;
                log_h_backward(&st, emb, &self.models.policy, &d, &mut pg);
            }
            self.actor_opt.step(&mut self.models.policy, &pg);
            (loss, cg)
        } else {
            td_loss(&transitions, &targets, &self.models.critic, emb)?
        };
        let mut out = Vec::new();
        if cfg.td_supervised {
            let samples: Vec<(Array1<f64>, usize)> = trajectories
                .iter()
                .flat_map(|t| t.steps.iter().filter_map(|s| s.logged.map(|l| (s.state.clone(), l))))
                .collect();
            let ce = supervised_q_loss(&samples, &self.models.critic, emb, cfg.supervised_weight, &mut cg);
            loss += ce;
            out.push(MetricRecord::new(it, "supervised_loss", ce, "train"));
        }
        self.critic_opt.step(&mut self.models.critic, &cg);
        out.push(MetricRecord::new(it, "td_loss", loss, "train"));
        Ok(out)
    }
}

/// Runs `config.iterations` iterations from a seeded initialization.
pub fn train(config: &TrainConfig, kind: OptimizerKind, env: TrainEnv<'_>) -> Result<TrainOutput> {
    let catalog = match &env {
        TrainEnv::Replay { dataset } => dataset.catalog(),
        TrainEnv::Simulator { sim, .. } => sim.catalog(),
    };
    let models = Models::init(config, catalog)?;
    let mut trainer = Trainer::new(config.clone(), kind, env, models)?;
    let mut log = Vec::new();
    for _ in 0..config.iterations {
        log.extend(trainer.run_iteration()?);
    }
    Ok(TrainOutput {
        models: trainer.models,
        log,
    })
}

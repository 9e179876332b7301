mod common;

use common::{bandit_encoder, normals, one_hot, rng, step, FD_STEP, GRAD_TOL};
use ncmrec::critic::CriticParams;
use ncmrec::env::{generate_synthetic_dataset, Simulator, SimulatorConfig};
use ncmrec::nn::{finite_difference, relative_error, ParamSet};
use ncmrec::policy::{sample_action, score_all, PolicyParams};
use ncmrec::rl::{
    discounted_returns, gae_advantages, ppo_clip_loss, reinforce_gradient, td_loss, td_targets, train,
    Models, OptimizerKind, TrainConfig, TrainEnv, Trajectory, Transition,
};
use ncmrec::scm::GumbelNoise;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

#[test]
fn gae_matches_double_sum() {
    let e = common::gae_max_error(20);
    assert!(e <= 1e-10, "{e}");
}

#[test]
fn gae_endpoints() {
    let r = [1.0, 2.0, 3.0];
    let v = [0.5, -0.5, 0.25];
    // lambda = 1 gives returns minus values; lambda = 0 gives one-step residuals.
    let ret = discounted_returns(&r, 0.9).unwrap();
    let a1 = gae_advantages(&r, &v, 0.9, 1.0).unwrap();
    let a0 = gae_advantages(&r, &v, 0.9, 0.0).unwrap();
    for t in 0..3 {
        assert!((a1[t] - (ret[t] - v[t])).abs() < 1e-12);
        let next = if t < 2 { v[t + 1] } else { 0.0 };
        assert!((a0[t] - (r[t] + 0.9 * next - v[t])).abs() < 1e-12);
    }
}

#[test]
fn ppo_clip_hand_cases() {
    assert_eq!(common::ppo_case_mismatches(), vec![]);
    let (o, g) = ppo_clip_loss(&[1.0, 1.0], &[3.0, -1.0], 0.2).unwrap();
    assert_eq!(o, 1.0);
    assert_eq!(g, vec![1.5, -0.5]);
    assert!(ppo_clip_loss(&[0.0], &[1.0], 0.2).is_err());
}

#[test]
fn synced_policies_have_unit_ratio() {
    let enc = common::encoder(1, 1, 1);
    let pol = common::policy(1, 8);
    let s = Array1::from(normals(&mut rng(1, 51), common::DIM));
    let old = score_all(s.view(), &pol, &enc).unwrap().log_policy();
    let new = score_all(s.view(), &pol.clone(), &enc).unwrap().log_policy();
    for (o, n) in old.iter().zip(&new) {
        assert_eq!((n - o).exp(), 1.0);
    }
}

#[test]
fn td_on_a_chain_reaches_value_iteration() {
    let e = common::td_chain_error();
    assert!(e <= 1e-2, "{e}");
}

#[test]
fn td_loss_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let mut r = rng(seed, 53);
        let critic = CriticParams::init(4, 8, &mut r).unwrap();
        let emb = Array2::from_shape_vec((3, 4), normals(&mut r, 12)).unwrap();
        let transitions: Vec<Transition> = (0..4)
            .map(|i| Transition {
                state: Array1::from(normals(&mut r, 4)),
                action: i % 3,
                reward: normals(&mut r, 1)[0],
                next_state: (i % 2 == 0).then(|| Array1::from(normals(&mut r, 4))),
            })
            .collect();
        let targets = td_targets(&transitions, &critic, emb.view(), 0.7);
        let (_, g) = td_loss(&transitions, &targets, &critic, emb.view()).unwrap();
        let fd = finite_difference(&critic, FD_STEP, |c: &CriticParams| td_loss(&transitions, &targets, c, emb.view()).unwrap().0);
        let e = relative_error(&g.flatten(), &fd);
        assert!(e < GRAD_TOL, "seed {seed}: {e}");
    }
}

#[test]
fn reinforce_solves_a_two_armed_bandit() {
    assert!(common::bandit_steps_to_best_arm(2000).is_some(), "P(best arm) stayed below 0.99 for 2000 steps");
}

/// Two-step episodes on states {A, B}: the first action decides whether the
/// second step happens in A or B. With gamma = 1 the averaged estimator must
/// match the finite-difference gradient of the enumerated objective.
#[test]
fn reinforce_is_unbiased_on_a_small_mdp() {
    let enc = bandit_encoder(2, 1);
    let emb = enc.action_embeddings();
    let mut pol = PolicyParams::init(4, 6, &mut rng(1, 57)).unwrap();
    for v in pol.b.iter_mut() {
        *v = 0.3;
    }
    let states = [one_hot(4, 0), one_hot(4, 1)];
    let reward = [[1.0, 0.0], [0.5, 2.0]];
    let next = |a: usize| if a == 0 { 1 } else { 0 };
    let objective = |p: &PolicyParams| -> f64 {
        let pi = |s: usize| -> Vec<f64> {
            score_all(states[s].view(), p, &enc).unwrap().log_policy().iter().map(|l| l.exp()).collect()
        };
        let p0 = pi(0);
        let mut j = 0.0;
        for a0 in 0..2 {
            let s1 = next(a0);
            let p1 = pi(s1);
            for a1 in 0..2 {
                j += p0[a0] * p1[a1] * (reward[0][a0] + reward[s1][a1]);
            }
        }
        j
    };
    let exact = finite_difference(&pol, FD_STEP, objective);

    let n = 100_000;
    let dim = pol.num_params();
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut r = rng(1, 58);
    for _ in 0..n {
        let mut s = 0;
        let mut steps = Vec::new();
        for _ in 0..2 {
            let lh = score_all(states[s].view(), &pol, &enc).unwrap().log_h;
            let a = sample_action(&lh, &GumbelNoise::sample(&mut r, 2)).unwrap();
            steps.push(step(&states[s], a, reward[s][a]));
            s = next(a);
        }
        let traj = Trajectory { steps };
        let ret = discounted_returns(&traj.rewards(), 1.0).unwrap();
        let g = reinforce_gradient(&[traj], &[ret], &pol, emb).unwrap().flatten();
        for i in 0..dim {
            sum[i] += g[i];
            sum_sq[i] += g[i] * g[i];
        }
    }
    for i in 0..dim {
        let mean = sum[i] / n as f64;
        let se = ((sum_sq[i] / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact[i]).abs() <= 4.0 * se + 1e-9, "param {i}: {mean} vs {} (se {se})", exact[i]);
    }
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        dim: 8,
        policy_hidden: 8,
        reward_hidden: 8,
        critic_hidden: 16,
        batch_size: 16,
        episodes: 3,
        iterations: 2,
        window: 4,
        ppo_epochs: 2,
        seed,
        ..TrainConfig::default()
    }
}

fn tiny_sim() -> Simulator {
    Simulator::new(SimulatorConfig {
        catalog: 15,
        episode_len: 6,
        ..SimulatorConfig::default()
    })
    .unwrap()
}

#[test]
fn zero_iterations_return_the_initialization() {
    let sim = tiny_sim();
    let log = generate_synthetic_dataset(&sim, 0, 20, 4).unwrap();
    let cfg = TrainConfig {
        iterations: 0,
        ..tiny_config(3)
    };
    let out = train(
        &cfg,
        OptimizerKind::Ppo,
        TrainEnv::Simulator {
            sim: &sim,
            observations: &log.observations,
        },
    )
    .unwrap();
    assert_eq!(out.models, Models::init(&cfg, sim.catalog()).unwrap());
    assert!(out.log.is_empty());
}

#[test]
fn training_is_deterministic_per_seed() {
    let sim = tiny_sim();
    let log = generate_synthetic_dataset(&sim, 0, 20, 4).unwrap();
    for kind in OptimizerKind::ALL {
        let run = |seed| {
            train(
                &tiny_config(seed),
                kind,
                TrainEnv::Simulator {
                    sim: &sim,
                    observations: &log.observations,
                },
            )
            .unwrap()
        };
        let (a, b, c) = (run(5), run(5), run(6));
        assert_eq!(a.models, b.models, "{kind}");
        assert_eq!(a.log, b.log, "{kind}");
        assert_ne!(a.models, c.models, "{kind}");
        assert!(a.models.all_finite());
    }
}

#[test]
fn replay_training_runs_every_optimizer() {
    let sim = tiny_sim();
    let data = generate_synthetic_dataset(&sim, 1, 40, 4).unwrap().dataset.with_split(0, 0.2).unwrap();
    for kind in OptimizerKind::ALL {
        let cfg = TrainConfig {
            td_supervised: kind == OptimizerKind::Td,
            ..tiny_config(0)
        };
        let out = train(&cfg, kind, TrainEnv::Replay { dataset: &data }).unwrap();
        assert!(out.models.all_finite(), "{kind}");
        assert!(out.log.iter().all(|r| r.value.is_finite()), "{kind}");
    }
}

#[test]
fn optimizer_names_round_trip() {
    for k in OptimizerKind::ALL {
        assert_eq!(k.name().parse::<OptimizerKind>().unwrap(), k);
    }
    let err = "sarsa".parse::<OptimizerKind>().unwrap_err().to_string();
    assert!(err.contains("reinforce") && err.contains("td") && err.contains("ppo"));
}

proptest! {
    #[test]
    fn returns_match_brute_force(rewards in prop::collection::vec(-5.0f64..5.0, 1..12), gamma in 0.0f64..1.0) {
        let got = discounted_returns(&rewards, gamma).unwrap();
        for t in 0..rewards.len() {
            let want: f64 = (t..rewards.len()).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum();
            prop_assert!((got[t] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn clip_objective_never_exceeds_unclipped(r in 0.01f64..3.0, a in -5.0f64..5.0, eps in 0.05f64..0.5) {
        let (o, _) = ppo_clip_loss(&[r], &[a], eps).unwrap();
        prop_assert!(o <= r * a + 1e-12);
    }
}

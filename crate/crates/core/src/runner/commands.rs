use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_state, HistoryPrefix, Interaction};
use crate::env::{
    generate_synthetic_dataset, load_sessions, BehaviorMapping, DatasetStats, SessionDataset, Simulator,
    SimulatorConfig, Split,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_replay, evaluate_simulator, MetricRecord, ReplayReport, SimulatorReport};
use crate::reward::RealRecord;
use crate::rl::{ActingRule, Models, Scorer, TrainEnv, Trainer};
use crate::rng::{self, Purpose};
use crate::scm::{
    random_trial, verify_gumbel_consistency, verify_random_trials, ConsistencyReport, NoiseCoupling,
    TheoremSuiteReport,
};

use super::config::{Baseline, EnvKind, RunConfig};
use super::{append_metric_log, Checkpoint};

const RANKING_KS: [usize; 2] = [5, 10];

/// A materialized environment for training or evaluation.
pub enum RunEnv {
    Replay(SessionDataset),
    Simulator {
        sim: Simulator,
        /// Logged observations; empty unless built for training.
        observations: Vec<RealRecord>,
    },
}

impl RunEnv {
    pub fn catalog(&self) -> usize {
        match self {
            RunEnv::Replay(d) => d.catalog(),
            RunEnv::Simulator { sim, .. } => sim.catalog(),
        }
    }

    pub fn train_env(&self) -> TrainEnv<'_> {
        match self {
            RunEnv::Replay(dataset) => TrainEnv::Replay { dataset },
            RunEnv::Simulator { sim, observations } => TrainEnv::Simulator { sim, observations },
        }
    }
}

pub fn build_env(cfg: &RunConfig, for_training: bool) -> Result<RunEnv> {
    match cfg.env {
        EnvKind::Replay => {
            if cfg.data.is_empty() {
                return Err(Error::invalid("the replay environment needs `data` (a session log path)"));
            }
            let mapping = BehaviorMapping::parse(&cfg.behavior_mapping)?;
            let dataset = load_sessions(Path::new(&cfg.data), &mapping)?.with_split(cfg.split_seed, cfg.test_fraction)?;
            Ok(RunEnv::Replay(dataset))
        }
        EnvKind::Simulator => {
            let sim = Simulator::new(cfg.simulator())?;
            let observations = if for_training {
                generate_synthetic_dataset(&sim, cfg.sim_seed, cfg.log_sessions, cfg.train.window)?.observations
            } else {
                Vec::new()
            };
            Ok(RunEnv::Simulator { sim, observations })
        }
    }
}

pub fn scorer_for(cfg: &RunConfig) -> Scorer {
    match cfg.baseline {
        Baseline::Uniform => Scorer::Uniform,
        Baseline::None => Scorer::Learned(ActingRule {
            kind: cfg.optimizer,
            gamma_a: cfg.train.gamma_a,
            policy_flow: cfg.train.td_policy_flow,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "snake_case")]
pub enum EvalReport {
    Replay(ReplayReport),
    Simulator(SimulatorReport),
}

impl EvalReport {
    pub fn to_records(&self, iteration: usize) -> Vec<MetricRecord> {
        match self {
            EvalReport::Replay(r) => r.to_records(iteration),
            EvalReport::Simulator(r) => vec![
                MetricRecord::new(iteration, "ctr", r.mean_ctr, "eval"),
                MetricRecord::new(iteration, "ctr_se", r.std_error, "eval"),
            ],
        }
    }
}

pub fn evaluate_models(cfg: &RunConfig, env: &RunEnv, models: &Models, split: Split) -> Result<EvalReport> {
    if models.catalog() != env.catalog() {
        return Err(Error::Checkpoint(format!(
            "model catalog {} does not match environment catalog {}",
            models.catalog(),
            env.catalog()
        )));
    }
    let scorer = scorer_for(cfg);
    let window = cfg.train.window;
    match env {
        RunEnv::Replay(dataset) => {
            let ks: Vec<usize> = RANKING_KS.into_iter().filter(|&k| k <= dataset.catalog()).collect();
            if ks.is_empty() {
                return Err(Error::invalid("catalog smaller than the smallest ranking cutoff"));
            }
            Ok(EvalReport::Replay(evaluate_replay(models, scorer, dataset, split, window, &ks, cfg.eval_seed)?))
        }
        RunEnv::Simulator { sim, .. } => Ok(EvalReport::Simulator(evaluate_simulator(
            models,
            scorer,
            sim,
            cfg.eval_episodes,
            window,
            cfg.eval_seed,
        )?)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub report: EvalReport,
}

/// Trains from a fresh initialization and writes `config.txt`,
/// `metrics.jsonl` and `checkpoint.json` under the output directory.
pub fn command_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let out = PathBuf::from(&cfg.output);
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let env = build_env(cfg, true)?;
    let models = Models::init(&cfg.train, env.catalog())?;
    let mut trainer = Trainer::new(cfg.train.clone(), cfg.optimizer, env.train_env(), models)?;

    let metrics_path = out.join("metrics.jsonl");
    let mut log = fs::File::create(&metrics_path)?;
    let start = Instant::now();
    let stamp = |mut records: Vec<MetricRecord>| {
        if cfg.log_wall_clock {
            let t = start.elapsed().as_secs_f64();
            records.iter_mut().for_each(|r| r.wall_clock = Some(t));
        }
        records
    };

    let iterations = cfg.train.iterations;
    for it in 1..=iterations {
        append_metric_log(&mut log, &stamp(trainer.run_iteration()?))?;
        if cfg.eval_every > 0 && it % cfg.eval_every == 0 && it != iterations {
            let report = evaluate_models(cfg, &env, &trainer.models, Split::Test)?;
            append_metric_log(&mut log, &stamp(report.to_records(it)))?;
        }
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            Checkpoint::new(cfg.clone(), it, trainer.models.clone()).save(&out.join(format!("checkpoint-{it:06}.json")))?;
        }
    }
    let report = evaluate_models(cfg, &env, &trainer.models, Split::Test)?;
    append_metric_log(&mut log, &stamp(report.to_records(iterations)))?;
    let checkpoint = out.join("checkpoint.json");
    Checkpoint::new(cfg.clone(), iterations, trainer.models).save(&checkpoint)?;
    Ok(TrainSummary {
        iterations,
        checkpoint,
        metrics: metrics_path,
        report,
    })
}

/// Evaluates a checkpoint under its own config with `overrides` applied
/// (e.g. `eval_seed`, `eval_episodes`, `baseline`).
pub fn command_evaluate(checkpoint: &Path, overrides: &[(String, String)], split: Split) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = ck.config;
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    let env = build_env(&cfg, false)?;
    evaluate_models(&cfg, &env, &ck.models, split)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareArgs {
    pub input: Option<PathBuf>,
    pub synthetic: bool,
    pub sessions: usize,
    pub seed: u64,
    pub sim: SimulatorConfig,
    pub window: usize,
    pub behavior_mapping: String,
    pub output: PathBuf,
}

impl Default for PrepareArgs {
    fn default() -> Self {
        Self {
            input: None,
            synthetic: false,
            sessions: 1000,
            seed: 0,
            sim: SimulatorConfig::default(),
            window: 10,
            behavior_mapping: BehaviorMapping::default().to_spec(),
            output: PathBuf::from("data"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedData {
    pub stats: DatasetStats,
    pub sessions: PathBuf,
    pub stats_file: PathBuf,
}

/// Filters a session log (or generates one from the simulator) and writes
/// `sessions.csv` and `stats.json`.
pub fn command_prepare_data(args: &PrepareArgs) -> Result<PreparedData> {
    let dataset = match (&args.input, args.synthetic) {
        (Some(_), true) => return Err(Error::invalid("give either an input file or --synthetic, not both")),
        (None, false) => return Err(Error::invalid("an input file or --synthetic is required")),
        (Some(path), false) => load_sessions(path, &BehaviorMapping::parse(&args.behavior_mapping)?)?,
        (None, true) => {
            let sim = Simulator::new(args.sim)?;
            generate_synthetic_dataset(&sim, args.seed, args.sessions, args.window)?.dataset
        }
    };
    fs::create_dir_all(&args.output)?;
    let sessions = args.output.join("sessions.csv");
    fs::write(&sessions, dataset.to_csv())?;
    let stats = dataset.stats();
    let stats_file = args.output.join("stats.json");
    fs::write(&stats_file, serde_json::to_string_pretty(&stats)? + "\n")?;
    Ok(PreparedData {
        stats,
        sessions,
        stats_file,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyArgs {
    pub trials: usize,
    pub min_dim: usize,
    pub max_dim: usize,
    pub samples: usize,
    pub seed: u64,
    /// Also run the independent-noise contrast.
    pub contrast: bool,
    /// Checks the reward head of this checkpoint as well.
    pub checkpoint: Option<PathBuf>,
    pub head_pairs: usize,
}

impl Default for ConsistencyArgs {
    fn default() -> Self {
        Self {
            trials: 1000,
            min_dim: 2,
            max_dim: 5,
            samples: 100_000,
            seed: 0,
            contrast: false,
            checkpoint: None,
            head_pairs: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConsistency {
    pub pairs: usize,
    pub antecedent_pairs: usize,
    pub violations: usize,
    pub max_pn_under_antecedent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCommandReport {
    pub suite: TheoremSuiteReport,
    /// Trial 0 against itself: the PN table has a unit diagonal.
    pub identical: ConsistencyReport,
    pub contrast: Option<TheoremSuiteReport>,
    pub head: Option<HeadConsistency>,
    /// Shared-noise violations over the suite and the reward head.
    pub violations: usize,
}

const HEAD_KEY: u64 = 0x6865_6164;

fn head_consistency(models: &Models, window: usize, args: &ConsistencyArgs) -> Result<HeadConsistency> {
    let enc = &models.disc.encoder;
    let catalog = enc.catalog();
    if catalog < 2 {
        return Err(Error::invalid("head consistency needs at least two items"));
    }
    let mut out = HeadConsistency {
        pairs: args.head_pairs,
        antecedent_pairs: 0,
        violations: 0,
        max_pn_under_antecedent: 0.0,
    };
    for i in 0..args.head_pairs as u64 {
        let mut r = rng::stream(args.seed, Purpose::Consistency, &[HEAD_KEY, i]);
        let len = r.random_range(0..=window);
        let items = (0..len)
            .map(|_| Interaction::new(r.random_range(0..catalog), r.random::<bool>()))
            .collect();
        let s = encode_state(&HistoryPrefix::new(items, window), enc)?;
        let a1 = r.random_range(0..catalog);
        let a2 = (a1 + r.random_range(1..catalog)) % catalog;
        let f = models.disc.head.forward(s.view(), enc.action_embedding(a1)).log_probs;
        let c = models.disc.head.forward(s.view(), enc.action_embedding(a2)).log_probs;
        let rep = verify_gumbel_consistency(&f, &c, args.samples, rng::stream_seed(args.seed, Purpose::Consistency, &[HEAD_KEY, i, 1]))?;
        out.antecedent_pairs += rep.pairs.iter().filter(|p| p.antecedent).count();
        out.violations += rep.violations;
        out.max_pn_under_antecedent = out.max_pn_under_antecedent.max(rep.pn_estimate);
    }
    Ok(out)
}

pub fn command_verify_consistency(args: &ConsistencyArgs) -> Result<ConsistencyCommandReport> {
    let suite =
        verify_random_trials(args.trials, args.min_dim, args.max_dim, args.samples, args.seed, NoiseCoupling::Shared)?;
    let t = random_trial(args.seed, 0, args.min_dim, args.max_dim);
    let identical = verify_gumbel_consistency(&t.factual, &t.factual, args.samples, args.seed)?;
    let contrast = if args.contrast {
        Some(verify_random_trials(
            args.trials,
            args.min_dim,
            args.max_dim,
            args.samples,
            args.seed,
            NoiseCoupling::Independent,
        )?)
    } else {
        None
    };
    let head = match &args.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            Some(head_consistency(&ck.models, ck.config.train.window, args)?)
        }
        None => None,
    };
    let violations = suite.violations + identical.violations + head.as_ref().map_or(0, |h| h.violations);
    Ok(ConsistencyCommandReport {
        suite,
        identical,
        contrast,
        head,
        violations,
    })
}

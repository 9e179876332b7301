use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ncmrec::env::{SimulatorConfig, Split};
use ncmrec::runner::{
    command_evaluate, command_prepare_data, command_report, command_train, command_verify_consistency,
    ConsistencyArgs, PrepareArgs, RunConfig,
};
use ncmrec::Error;
use serde::Serialize;

/// Overrides the default output root of `train` and `prepare-data`.
const OUTPUT_ENV: &str = "NCMREC_OUTPUT";

#[derive(Parser)]
#[command(name = "ncmrec", version, about = "Causal-consistent reinforcement learning for recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a session log (or generate a synthetic one) and write dataset statistics.
    PrepareData(PrepareCmd),
    /// Train an agent; any config key can be given as `--key value`.
    Train(TrainCmd),
    /// Evaluate a checkpoint; config keys may be overridden as `--key value`.
    Evaluate(EvaluateCmd),
    /// Check counterfactual consistency of Gumbel-max selection.
    VerifyConsistency(ConsistencyCmd),
    /// Summarize a metric log and optionally plot CTR curves.
    Report(ReportCmd),
}

#[derive(Args)]
struct PrepareCmd {
    /// Session log: session_id, timestamp, item_id, behavior.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Generate sessions from the simulator instead of reading a file.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 1000)]
    sessions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    catalog: usize,
    #[arg(long, default_value_t = 20)]
    episode_len: usize,
    #[arg(long, default_value_t = 0)]
    sim_seed: u64,
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// `token=click|purchase|ignore` pairs separated by commas.
    #[arg(long)]
    behavior_mapping: Option<String>,
    /// Defaults to `$NCMREC_OUTPUT/data`, else `data`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainCmd {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved config and exit without training.
    #[arg(long)]
    print_config: bool,
    /// `--key value` config overrides.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct EvaluateCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// `--key value` overrides of the checkpoint's config.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ConsistencyCmd {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 2)]
    min_dim: usize,
    #[arg(long, default_value_t = 5)]
    max_dim: usize,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run the independent-noise contrast, which should violate consistency.
    #[arg(long)]
    contrast: bool,
    /// Check the reward head of this checkpoint too.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    head_pairs: usize,
}

#[derive(Args)]
struct ReportCmd {
    #[arg(long)]
    metrics: PathBuf,
    /// Write CTR-vs-iteration curves to this SVG file.
    #[arg(long)]
    plot: Option<PathBuf>,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(flag) = it.next() {
        let Some(body) = flag.strip_prefix("--") else {
            return Err(Error::InvalidArgument(format!("expected `--key value`, found `{flag}`")));
        };
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::InvalidArgument(format!("`{flag}` needs a value")))?;
                (body.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn train(cmd: TrainCmd) -> Result<(), Error> {
    let mut config_path = cmd.config;
    let mut print_config = cmd.print_config;
    let mut overrides = Vec::new();
    for (k, v) in parse_overrides(&cmd.overrides)? {
        match k.as_str() {
            "config" => config_path = Some(PathBuf::from(v)),
            "print_config" => print_config = v.parse().map_err(|_| Error::Config("`print_config` expects true or false".into()))?,
            _ => overrides.push((k, v)),
        }
    }
    let mut cfg = match &config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Ok(root) = std::env::var(OUTPUT_ENV) {
        cfg.set("output", &root)?;
    }
    for (k, v) in &overrides {
        cfg.set(k, v)?;
    }
    if print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    print_json(&command_train(&cfg)?)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::PrepareData(c) => {
            let output = c.output.unwrap_or_else(|| match std::env::var(OUTPUT_ENV) {
                Ok(root) => PathBuf::from(root).join("data"),
                Err(_) => PathBuf::from("data"),
            });
            let defaults = PrepareArgs::default();
            let args = PrepareArgs {
                input: c.input,
                synthetic: c.synthetic,
                sessions: c.sessions,
                seed: c.seed,
                sim: SimulatorConfig {
                    catalog: c.catalog,
                    episode_len: c.episode_len,
                    seed: c.sim_seed,
                    ..SimulatorConfig::default()
                },
                window: c.window,
                behavior_mapping: c.behavior_mapping.unwrap_or(defaults.behavior_mapping),
                output,
            };
            print_json(&command_prepare_data(&args)?)
        }
        Command::Train(c) => train(c),
        Command::Evaluate(c) => {
            let split = match c.split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            print_json(&command_evaluate(&c.checkpoint, &parse_overrides(&c.overrides)?, split)?)
        }
        Command::VerifyConsistency(c) => print_json(&command_verify_consistency(&ConsistencyArgs {
            trials: c.trials,
            min_dim: c.min_dim,
            max_dim: c.max_dim,
            samples: c.samples,
            seed: c.seed,
            contrast: c.contrast,
            checkpoint: c.checkpoint,
            head_pairs: c.head_pairs,
        })?),
        Command::Report(c) => {
            print!("{}", command_report(&c.metrics, c.plot.as_deref())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}

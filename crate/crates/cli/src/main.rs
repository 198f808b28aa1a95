//! `smore` command line: prepare, train, evaluate and inspect.

mod data;
mod evaluate;
mod inspect;
mod prepare;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smore::trainer::{TrainConfig, ENV_PREFIX};
use smore::{Error, ErrorKind, Result};

#[derive(Debug, Parser)]
#[command(
    name = "smore",
    version,
    about = "Spectrum-based multimodal recommender"
)]
struct Cli {
    /// TOML training config; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for graph building and evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// error, warn, info, debug or trace; `SMORE_LOG` refines it with env_logger filters.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter, index and split raw interactions and align feature files.
    Prepare(prepare::Args),
    /// Train a model on a prepared dataset directory.
    Train(train::Args),
    /// Score a checkpoint on one split.
    Evaluate(evaluate::Args),
    /// Uniformity statistics of fused item features.
    Inspect(inspect::Args),
}

/// Config file (or defaults), then `SMORE_*` environment variables, then `--seed`.
fn resolve_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<TrainConfig> {
    let base = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let vars = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX));
    let mut cfg = base.with_overrides(vars, &["SMORE_LOG"])?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure {} threads: {e}", cli.threads)))?;
    }
    match cli.command {
        Command::Prepare(args) => {
            let seed = match (cli.seed, &cli.config) {
                (Some(s), _) => s,
                (None, Some(_)) => resolve_config(cli.config.as_ref(), None)?.seed,
                (None, None) => TrainConfig::default().seed,
            };
            prepare::run(&args, seed)
        }
        Command::Train(args) => {
            let config = args.config.as_ref().or(cli.config.as_ref());
            let cfg = resolve_config(config, cli.seed)?;
            train::run(&args, cfg, config.map(PathBuf::as_path))
        }
        Command::Evaluate(args) => evaluate::run(&args),
        Command::Inspect(args) => inspect::run(&args),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Input => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Internal => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .parse_env("SMORE_LOG")
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

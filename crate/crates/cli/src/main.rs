//! `stsheaf`: spectra, diffusion, oversmoothing curves, training,
//! evaluation, ablations and synthetic data from one JSON config.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage or configuration
//! error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::Outputs;
use config::RunConfig;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "stsheaf", version, about = "Sheaf diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Largest eigenvalue, smallest positive eigenvalue and kernel dimension.
    Spectrum,
    /// Discrete gradient flow of the sheaf energy.
    Diffuse,
    /// Layer-wise edge distances of sheaf layers against GCN propagation.
    Oversmooth,
    /// Trains a model and writes its checkpoint and history.
    Train,
    /// Test-split metrics of a checkpoint.
    Eval,
    /// Four-variant ablation and stalk-dimension sweep.
    Ablate,
    /// Writes synthetic graph and series data.
    Gen,
}

/// Failures with a known exit code.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|e| e.downcast_ref::<stsheaf::Error>().is_some_and(stsheaf::Error::is_numerical));
    if numerical {
        1
    } else {
        2
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("STSHEAF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Usage(format!("STSHEAF_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    let cfg = load_config(cli)?;
    let mut out = Outputs::new(&cfg.out_dir)?;
    let result = match cli.command {
        Command::Spectrum => commands::cmd_spectrum(&cfg, &mut out),
        Command::Diffuse => commands::cmd_diffuse(&cfg, &mut out),
        Command::Oversmooth => commands::cmd_oversmooth(&cfg, &mut out),
        Command::Train => commands::cmd_train(&cfg, &mut out),
        Command::Eval => commands::cmd_eval(&cfg, &mut out).map(|_| ()),
        Command::Ablate => commands::cmd_ablate(&cfg, &mut out),
        Command::Gen => commands::cmd_gen(&cfg, &mut out),
    };
    if result.is_err() {
        out.discard();
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

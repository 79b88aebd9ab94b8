//! Command-line driver for hierarchical boundary control of the wave
//! equation on a time-growing interval: forward simulation, the follower
//! and leader optimization stages, and a self-checking verification suite.
//!
//! Exit codes: `0` success, `1` configuration error, `2` solver failure,
//! `3` verification failure.

mod commands;
mod config;
mod report;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use hcwave::{par, Error};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hcwave",
    version,
    about = "Hierarchical boundary control of the 1D wave equation on a growing interval"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "hcwave.toml")]
    config: PathBuf,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the configured seed for randomized checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Accept profiles that bypass the moving-boundary hypotheses.
    #[arg(long, global = true)]
    allow_degenerate: bool,
    /// Enable dense-matrix cross checks (small grids only).
    #[arg(long, global = true)]
    dense_oracle: bool,
    /// Cap the worker thread count.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check the boundary profile against the moving-boundary hypotheses.
    Validate,
    /// Evaluate the sufficient control-time thresholds for the speed window.
    Thresholds,
    /// Run the forward wave solve with the configured data and leader trace.
    Simulate,
    /// Solve the follower tracking problem for the configured leader trace.
    Follower,
    /// Run the full leader pipeline with duality certificates.
    Leader,
    /// Replay the discrete identities and certificates; nonzero exit on failure.
    Verify,
    /// Run the configured parameter sweep, one CSV row per instance.
    Sweep,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Thresholds => "thresholds",
            Command::Simulate => "simulate",
            Command::Follower => "follower",
            Command::Leader => "leader",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        }
    }
}

/// Configuration-shaped failures exit 1, operational solver failures 2.
fn exit_for(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter(_)
        | Error::Domain(_)
        | Error::Shape(_)
        | Error::Hypothesis { .. }
        | Error::Cfl { .. }
        | Error::Guard(_)
        | Error::Parse(_) => 1,
        Error::Divergence { .. }
        | Error::IterationLimit { .. }
        | Error::NonContractive { .. }
        | Error::DualStalled { .. }
        | Error::Io(_) => 2,
    }
}

fn run(cli: &Cli) -> hcwave::Result<i32> {
    let (config, bytes) = config::Config::load(&cli.config)?;
    let dir = cli
        .config
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_default();
    let seed = cli.seed.or(config.solver.seed).unwrap_or(0x5eed);
    let args = commands::RunArgs {
        config: &config,
        config_bytes: &bytes,
        config_dir: &dir,
        outdir: &cli.out,
        command: cli.command.name(),
        seed,
        allow_degenerate: cli.allow_degenerate,
        dense_oracle: cli.dense_oracle,
    };
    match cli.command {
        Command::Validate => commands::cmd_validate(&args),
        Command::Thresholds => commands::cmd_thresholds(&args),
        Command::Simulate => commands::cmd_simulate(&args),
        Command::Follower => commands::cmd_follower(&args),
        Command::Leader => commands::cmd_leader(&args),
        Command::Verify => commands::cmd_verify(&args),
        Command::Sweep => commands::cmd_sweep(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version are not errors; everything else is a usage
            // problem and lands in the configuration exit class.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if !par::configure_threads(n) && par::parallel_enabled() {
            eprintln!("note: thread pool already running; --jobs ignored");
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}

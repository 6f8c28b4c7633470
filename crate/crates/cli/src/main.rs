//! Batch front end: load a chain and a function from a TOML config,
//! dispatch one operation, and emit CSV tables plus run metadata.
//!
//! Exit codes: 0 on success, 2 when a check fails (validation, drift
//! violation, demo assertion), 1 on input or solver errors.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::Ctx;
use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, bad arguments, unreadable files.
    Input(String),
    /// A verification the command performs came out negative.
    Check(String),
    /// An operation failed inside the library.
    Core(markov_poisson::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Check(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<markov_poisson::Error> for CliError {
    fn from(e: markov_poisson::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Parser)]
#[command(
    name = "markov-poisson",
    about = "Poisson's equation on countable-state Markov chains: exact truncated \
             solvers, drift certificates, regenerative Monte Carlo",
    version
)]
struct Cli {
    /// Run configuration (TOML). Missing file = defaults.
    #[arg(long, global = true, default_value = "run.toml")]
    config: PathBuf,
    /// Master seed override for Monte Carlo commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Initial truncation size override.
    #[arg(long, global = true)]
    trunc_size: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the configured truncation and report its structural checks.
    Validate,
    /// Refined stationary distribution.
    Stationary,
    /// Solve Poisson's equation by one method or all three.
    Solve {
        /// gz | direct | gstar | all
        #[arg(long, default_value = "all")]
        method: String,
    },
    /// Cycle moments (and a solidarity table when several probes are set).
    Moments,
    /// Drift certificates: queue synthesis or explicit polynomial drift.
    Lyapunov,
    /// Regenerative ratio estimation with confidence intervals.
    Simulate,
    /// CLT replication experiment against the exact sigma.
    Clt,
    /// Law-of-the-iterated-logarithm trajectory.
    Lil,
    /// Hub-and-rails walkthrough: closed forms, harmonic family,
    /// uniform-integrability separation.
    #[command(name = "demo-example1")]
    DemoExample1,
    /// Current-age walkthrough: renewal deviations, tail slope, potential
    /// series verdict.
    #[command(name = "demo-example2")]
    DemoExample2 {
        /// Tail exponent override.
        #[arg(long)]
        alpha: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.mc.seed = Some(seed);
    }
    if let Some(size) = cli.trunc_size {
        cfg.truncation.initial_size = size;
    }
    let out_dir = cli.out_dir.unwrap_or_else(|| cfg.outputs.dir.clone());
    let config_echo = toml::to_string_pretty(&cfg)
        .unwrap_or_else(|e| format!("(config echo failed: {e})"));
    let ctx = Ctx { cfg, out_dir, config_echo };
    match cli.command {
        Command::Validate => commands::validate(&ctx),
        Command::Stationary => commands::stationary(&ctx),
        Command::Solve { method } => commands::solve(&ctx, &method),
        Command::Moments => commands::moments(&ctx),
        Command::Lyapunov => commands::lyapunov(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Clt => commands::clt(&ctx),
        Command::Lil => commands::lil(&ctx),
        Command::DemoExample1 => commands::demo_example1(&ctx),
        Command::DemoExample2 { alpha } => commands::demo_example2(&ctx, alpha),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

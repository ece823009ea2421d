//! `chemostat` — scenario files in, CSV/JSON artifacts out.
//!
//! Every command takes a strict JSON scenario (`--config`), writes its
//! artifacts under `--out` (current directory by default), and reports
//! through the exit code: 0 success, 2 config error, 3 numerical failure,
//! 4 certification refusal. Outputs are deterministic: floats are printed
//! in their shortest round-trip form and all sampling is seeded.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod output;

/// Failure classes, one per nonzero exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unparseable or invalid scenario (exit 2). Carries a field-precise
    /// message.
    Config(String),
    /// A simulation or numeric procedure failed at runtime, or an artifact
    /// could not be written (exit 3).
    Numerical(String),
    /// The requested certificate does not exist for these parameters
    /// (exit 4). The refusal report has already been printed.
    Refusal,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Refusal => 4,
        }
    }
}

/// Maps core errors raised while *constructing* models from a scenario to
/// config errors; use [`run_err`] for errors raised while running them.
pub fn cfg_err(e: chemostat_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Maps core errors raised by simulations and numeric procedures.
pub fn run_err(e: chemostat_core::Error) -> CliError {
    CliError::Numerical(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "chemostat",
    version,
    about = "Chemostat feedback-stabilization toolkit: equilibria, certificates, simulations, and PDE comparisons"
)]
struct Cli {
    /// Directory artifacts are written into (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Seed for every sampled computation (certificate audits).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print every interior equilibrium with its constants and stability report.
    Equilibria {
        #[arg(long)]
        config: PathBuf,
    },
    /// Certify the stabilizing feedback (JSON certificate), or refuse with
    /// the divergence scenario when the growth margin fails.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Integrate the configured trajectories and write one CSV each.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sweep a grid of initial conditions into a polyline CSV.
    Portrait {
        #[arg(long)]
        config: PathBuf,
    },
    /// Label a grid of initial conditions by their fate.
    Basin {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare age-profile moments against the reduced three-state model
    /// over a grid-refinement ladder.
    PdeCompare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a canned scenario end to end and write its artifact bundle.
    Repro { target: ReproTarget },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ReproTarget {
    /// Two-state worked culture: equilibria, certificate, portrait, and the
    /// gain comparison from (1, 1).
    Example1,
    /// Three-state worked culture: equilibria, certificate, portrait.
    Example2,
    /// High-mortality culture where certification refuses and biomass
    /// diverges along the linear bound.
    Theorem2,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("config error: could not size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match &cli.cmd {
        Cmd::Equilibria { config } => {
            config::ScenarioConfig::load(config).and_then(|c| commands::equilibria(&c))
        }
        Cmd::Check { config } => config::ScenarioConfig::load(config)
            .and_then(|c| commands::check(&c, cli.seed, &cli.out)),
        Cmd::Simulate { config } => {
            config::ScenarioConfig::load(config).and_then(|c| commands::simulate(&c, &cli.out))
        }
        Cmd::Portrait { config } => {
            config::ScenarioConfig::load(config).and_then(|c| commands::portrait(&c, &cli.out))
        }
        Cmd::Basin { config } => {
            config::ScenarioConfig::load(config).and_then(|c| commands::basin(&c, &cli.out))
        }
        Cmd::PdeCompare { config } => {
            config::ScenarioConfig::load(config).and_then(|c| commands::pde_compare(&c, &cli.out))
        }
        Cmd::Repro { target } => commands::repro(*target, cli.seed, &cli.out),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(msg) => eprintln!("config error: {msg}"),
                CliError::Numerical(msg) => eprintln!("numerical failure: {msg}"),
                CliError::Refusal => eprintln!("certification refused (report above)"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}

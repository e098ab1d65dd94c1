//! `codesign`: command-line front end for the loss/latency co-design models.
//!
//! Data goes to stdout (or `--out`), logs to stderr. Exit codes:
//! 0 ok, 2 parse/usage/io, 3 validation, 4 infeasible or validity, 5 non-convergence.

mod commands;
mod inputs;
mod units;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use codesign::Error;

#[derive(Debug, Parser)]
#[command(name = "codesign", version, about = "Loss, latency and memory co-design for language models")]
struct Cli {
    /// Worker threads for the parallel loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output on stderr (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Loss of one architecture with its per-term breakdown.
    PredictLoss(commands::PredictLoss),
    /// Roofline latency and memory with per-operator breakdown.
    PredictLatency(commands::PredictLatency),
    /// Normalise latency targets into budgets and classify the regime.
    Regime(commands::Regime),
    /// Closed-form optimal architecture for a regime.
    Solve(commands::Solve),
    /// Loss/latency Pareto frontiers over a discrete grid.
    Pareto(commands::Pareto),
    /// Fit the loss-law coefficients to training runs.
    Fit(commands::Fit),
    /// Generate synthetic training runs from known coefficients.
    SynthRuns(commands::SynthRuns),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse(_) | Error::Io(_) => 2,
        Error::InvalidArchitecture(_)
        | Error::InvalidHardware(_)
        | Error::InvalidWorkload(_)
        | Error::InvalidCoefficients(_)
        | Error::InvalidSearchSpace(_)
        | Error::InvalidInput(_)
        | Error::InsufficientData(_)
        | Error::MissingBudget(_) => 3,
        Error::Infeasible(_) | Error::Validity(_) => 4,
        Error::NonConvergence { .. } | Error::FixedPointDivergence { .. } => 5,
    }
}

fn init_threads(n: Option<usize>) -> Result<(), Error> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(Error::InvalidInput("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("--threads {n} ignored: built without the parallel feature");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::PredictLoss(a) => commands::predict_loss(a),
        Command::PredictLatency(a) => commands::predict_latency(a),
        Command::Regime(a) => commands::regime(a),
        Command::Solve(a) => commands::solve(a),
        Command::Pareto(a) => commands::pareto(a),
        Command::Fit(a) => commands::fit(a),
        Command::SynthRuns(a) => commands::synth_runs(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

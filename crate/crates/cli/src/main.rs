//! `hob`: generate data, fit landscapes and replay bidding strategies.
//!
//! Exit status: 0 on success, 2 for usage or config problems, 3 when a
//! campaign constraint cannot be met, 4 when the numerics fail.

mod commands;
mod config;
mod error;
mod inputs;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::datagen::{DatagenArgs, OrganicizeArgs};
use commands::fit::FitArgs;
use commands::replay::{CompareArgs, PaceArgs, SimulateArgs, SweepArgs};
use error::{CliError, Result, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "hob", version, about = "Bid shading and marginal-cost alignment experiments")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic impression log with zero-inflated prices.
    Datagen(DatagenArgs),
    /// Add relative Gaussian noise to winning prices, clipping at zero.
    Organicize(OrganicizeArgs),
    /// Train landscape models and score them on a held-out split.
    Fit(FitArgs),
    /// Replay one strategy and write its report.
    Simulate(SimulateArgs),
    /// Constraint-matched comparison of every configured strategy.
    Compare(CompareArgs),
    /// Repeat the comparison over a grid.
    Sweep(SweepArgs),
    /// Stream the log through the PID pacing controller.
    Pace(PaceArgs),
}

/// Caps the rayon pool at `HOB_THREADS` when set.
fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("HOB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("HOB_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Datagen(a) => commands::datagen::run(a),
        Command::Organicize(a) => commands::datagen::run_organicize(a),
        Command::Fit(a) => commands::fit::run(a),
        Command::Simulate(a) => commands::replay::simulate(a),
        Command::Compare(a) => commands::replay::compare(a),
        Command::Sweep(a) => commands::replay::run_sweep(a),
        Command::Pace(a) => commands::replay::pace(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use iwsgd_harness::{cmd_bounds, cmd_compare, cmd_gradcheck, cmd_train, workers_from_env, HarnessError};

/// Importance-weighted multi-sample dropout experiments.
///
/// Worker threads are taken from IWSGD_WORKERS (default: all cores).
#[derive(Parser)]
#[command(name = "iwsgd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write metrics.csv and run.log.
    Train { config: PathBuf },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Perturb the analytic gradient to exercise the failure path.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Print exact S-sample bounds and the marginal likelihood.
    Bounds { config: PathBuf },
    /// Train every (S, seed) pair and summarize test error per S.
    Compare { config: PathBuf },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Train { config } => cmd_train(&config, workers_from_env()?, &mut out).map(drop),
        Command::Gradcheck { seed, trials, corrupt } => cmd_gradcheck(seed, trials, corrupt, &mut out).map(drop),
        Command::Bounds { config } => cmd_bounds(&config, &mut out).map(drop),
        Command::Compare { config } => cmd_compare(&config, workers_from_env()?, &mut out).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

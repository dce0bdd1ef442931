mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use error::CliError;

/// Time-frequency spectral estimation for underspread nonstationary processes.
#[derive(Parser)]
#[command(name = "tfspec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw an underspread system and write H, R, EA, EW and one realization
    Synthesize {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Estimate the time-frequency spectrum of a signal file
    Estimate {
        #[command(flatten)]
        overrides: Overrides,
        /// Signal file (.csv or .f64bin)
        #[arg(long)]
        input: PathBuf,
        /// Correlation kernel file; enables analytic bias/variance output
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the Monte Carlo, Isserlis and trace-identity suites
    Validate {
        #[command(flatten)]
        overrides: Overrides,
        /// Scale the analytic variance field (harness sensitivity check)
        #[arg(long, hide = true)]
        perturb_variance: Option<f64>,
    },
    /// Emit the matched or sinusoidal window set
    Tapers {
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("TFSPEC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("TFSPEC_THREADS must be a positive integer (got '{raw}')")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synthesize { overrides } => commands::synthesize(&RunConfig::resolve(&overrides)?),
        Command::Estimate {
            overrides,
            input,
            model,
        } => commands::estimate(&RunConfig::resolve(&overrides)?, &input, model.as_deref()),
        Command::Validate {
            overrides,
            perturb_variance,
        } => commands::validate(&RunConfig::resolve(&overrides)?, perturb_variance),
        Command::Tapers { overrides } => commands::tapers(&RunConfig::resolve(&overrides)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tfspec: {e}");
            e.exit_code()
        }
    }
}

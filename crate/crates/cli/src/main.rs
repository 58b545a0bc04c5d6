//! `fbcsp`: simulate data, train, evaluate and sweep FBCSP workload models.
//!
//! Exit codes: 0 on success, 1 for invalid configuration or inputs that do
//! not match the configuration, 2 for runtime failures (I/O, data, failed
//! sweep cells).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "fbcsp", version, about = "FBCSP mental-workload classification toolkit")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every config-driven command. Flags override the file.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Signal CSV, overrides `[data] signal`.
    #[arg(long)]
    pub signal: Option<PathBuf>,
    /// Marker CSV, overrides `[data] markers`.
    #[arg(long)]
    pub markers: Option<PathBuf>,
    /// Output directory, overrides `[output] dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Seed override: the synth seed for `simulate`, the cross-validation
    /// seed otherwise.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic recording from the `[synth]` section.
    Simulate(Common),
    /// Train one model per (model, pair, window) cell of the grid.
    Train(Common),
    /// Score trained models on the test sessions.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Model files; defaults to every grid cell under `<out>/models`.
        models: Vec<PathBuf>,
    },
    /// Train and evaluate the whole grid in one pass.
    Sweep(Common),
    /// Export the spatial filters of an FBCSP model as CSV.
    InspectFilters {
        model: PathBuf,
        /// Destination CSV; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Simulate(common) => commands::simulate(&common),
        Command::Train(common) => commands::train(&common),
        Command::Evaluate { common, models } => commands::evaluate(&common, &models),
        Command::Sweep(common) => commands::sweep(&common),
        Command::InspectFilters { model, out } => commands::inspect_filters(&model, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::CellsFailed(cells) = &e {
                for cell in cells {
                    eprintln!("  failed: {cell}");
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}

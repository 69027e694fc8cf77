//! `wavetile` command-line tool.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wavetile::ErrorKind;

#[derive(Parser, Debug)]
#[command(name = "wavetile", version, about = "Wavelet-image anomaly detection for time series")]
struct Cli {
    /// More log output (repeat for debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit on training data, score test data, write scores, state and report
    Detect(commands::DetectArgs),
    /// Compute metrics for a score file against labels
    Evaluate(commands::EvaluateArgs),
    /// Write image tiles, the full image and a score plot
    Render(commands::RenderArgs),
    /// Fit on training data and save the detector state
    ExportState(commands::ExportArgs),
    /// Load a saved detector state and score test data with it
    ImportState(commands::ImportArgs),
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Compute => 4,
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

    let result = match &cli.command {
        Command::Detect(a) => commands::detect(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Render(a) => commands::render(a),
        Command::ExportState(a) => commands::export_state(a),
        Command::ImportState(a) => commands::import_state(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod output;
mod scenario;

use commands::Context;
use output::Sink;
use scenario::Scenario;

/// Robust Kalman filtering and least favorable model synthesis from a JSON
/// scenario.
///
/// Exit status: 0 on success, 2 for invalid input, 3 for numerical failure.
#[derive(Parser)]
#[command(name = "robustkf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward robust filter: forward_trajectory.csv, steady_state.json
    /// (and c_max.json when c is "auto").
    Analyze(Io),
    /// Analyze, then the least favorable model: backward_trajectory.csv,
    /// certificate.json, lf_model.json, stabilizing.json.
    Synthesize(Io),
    /// Synthesize, then Kalman versus robust under the least favorable
    /// model: compare.csv, gap.json.
    Compare(Io),
    /// Certificate margin over the ρ grid: certificate_sweep.csv.
    CertificateSweep(Io),
}

#[derive(Args)]
struct Io {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (default: the scenario's "outputs", else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (Command::Analyze(io) | Command::Synthesize(io) | Command::Compare(io) | Command::CertificateSweep(io)) =
        &cli.command;
    let scenario = Scenario::load(&io.scenario)?;
    let dir = io.out.clone().or_else(|| scenario.outputs.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::input(format!("cannot create output directory {}: {e}", dir.display())))?;
    let ctx = Context { scenario: &scenario, sink: Sink { dir: &dir, scenario_hash: &scenario.hash } };
    ctx.check_model()?;

    match cli.command {
        Command::Analyze(_) => {
            commands::analyze(&ctx)?;
        }
        Command::Synthesize(_) => {
            let analysis = commands::analyze(&ctx)?;
            commands::synthesize(&ctx, &analysis)?;
        }
        Command::Compare(_) => {
            let analysis = commands::analyze(&ctx)?;
            let synthesis = commands::synthesize(&ctx, &analysis)?;
            commands::compare(&ctx, analysis, synthesis)?;
        }
        Command::CertificateSweep(_) => commands::certificate_sweep(&ctx)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("robustkf: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

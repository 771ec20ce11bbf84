mod commands;
mod config;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fluidq::ErrorCategory;

/// Loss-of-load probability and battery sizing for renewable generation
/// modeled as a Markov modulated fluid queue.
///
/// Exit codes: 0 success, 2 usage, 3 io, 4 parse, 5 model, 6 drift, 7 numeric.
#[derive(Parser)]
#[command(name = "fluidq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model from a power trace.
    Fit(Common),
    /// LOLP, LLR and overflow over a grid of battery sizes.
    Solve(Common),
    /// Decay rate by both routes, with samples of the cumulant curve.
    Decay(Common),
    /// Battery simulation driven by a CTMC, a DTMC or a recorded trace.
    Simulate(Common),
    /// Battery sizes for LOLP targets.
    Size(Common),
}

#[derive(Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config field, e.g. `--set solve.grid.points=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Unit for energy columns in the output.
    #[arg(long, value_enum, default_value_t = EnergyUnits::Native)]
    pub units: EnergyUnits,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnergyUnits {
    /// Power unit times time unit of the model.
    Native,
    Kwh,
}

fn exit_code(c: ErrorCategory) -> u8 {
    match c {
        ErrorCategory::Io => 3,
        ErrorCategory::Parse => 4,
        ErrorCategory::Model => 5,
        ErrorCategory::Drift => 6,
        ErrorCategory::Numeric => 7,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(c) => commands::fit(c),
        Command::Solve(c) => commands::solve(c),
        Command::Decay(c) => commands::decay(c),
        Command::Simulate(c) => commands::simulate(c),
        Command::Size(c) => commands::size(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: category={} {e}", e.category());
            if let Some(h) = e.hint() {
                eprintln!("hint: {h}");
            }
            ExitCode::from(exit_code(e.category()))
        }
    }
}

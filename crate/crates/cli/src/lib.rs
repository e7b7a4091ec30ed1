//! `coexec`: dataset generation, predictor training, partition planning and
//! co-execution simulation on synthetic mobile SoC models.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 validation
//! error (malformed data, planning or training failure).

mod bench;
mod config;
pub mod error;
mod gen;
mod plan;
mod simulate;
mod train;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "coexec", version, about = "CPU-GPU co-execution planning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample op configurations and record per-executor latencies.
    GenDataset(gen::GenArgs),
    /// Train per-kernel latency predictors and report their MAPE.
    Train(train::TrainArgs),
    /// Plan channel splits with the predictor and with measured grid search.
    Plan(plan::PlanArgs),
    /// Replay a network plan on the device model.
    Simulate(simulate::SimulateArgs),
    /// Measure rendezvous overhead of polling and passive waiting.
    SyncBench(bench::BenchArgs),
}

pub use error::CliError;

/// Execute a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenDataset(a) => gen::run(a),
        Command::Train(a) => train::run(a),
        Command::Plan(a) => plan::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::SyncBench(a) => bench::run(a),
    }
}

/// Parse `args` (program name first) and execute; usage errors are config
/// errors.
pub fn run_from<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::config(e.to_string()))?;
    run(cli)
}

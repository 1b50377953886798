//! `exq`: simulate scenarios, fit and apply the two extreme-quantile
//! methods, and run the benchmark.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use exq_core::ExqError;

use commands::{BenchmarkArgs, FiresArgs, FitBernsteinArgs, FitEqrnArgs, PredictArgs, SimulateArgs, TransformArgs};
use config::UsageError;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "exq", version, about = "Extreme conditional quantile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one of the four benchmark scenarios to a dataset CSV.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset CSV.
    Fit {
        #[command(subcommand)]
        method: FitCommand,
    },
    /// Predict conditional quantiles with a fitted model.
    Predict(PredictArgs),
    /// Run the simulation benchmark and write metric and plot CSVs.
    Benchmark(BenchmarkArgs),
    /// Empirical unit-Fréchet transform and threshold exceedances of a dataset.
    Transform(TransformArgs),
    /// Aggregate station fire records into a yearly dataset CSV.
    Fires(FiresArgs),
}

#[derive(Subcommand)]
enum FitCommand {
    /// Quantile forest plus tail network.
    Eqrn(FitEqrnArgs),
    /// Bernstein angular density sampled by MCMC.
    Bernstein(FitBernsteinArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<ExqError>() {
            if e.is_numerical() {
                return EXIT_NUMERICAL;
            }
            if matches!(e, ExqError::UnknownScenario(_)) {
                return EXIT_USAGE;
            }
            return EXIT_DATA;
        }
    }
    EXIT_DATA
}

/// A closed downstream pipe (`exq ... | head`) is not a failure.
fn is_broken_pipe(err: &anyhow::Error) -> bool {
    fn io_of_csv(e: &csv::Error) -> Option<&std::io::Error> {
        match e.kind() {
            csv::ErrorKind::Io(e) => Some(e),
            _ => None,
        }
    }
    err.chain().any(|c| {
        let io = c
            .downcast_ref::<std::io::Error>()
            .or_else(|| c.downcast_ref::<csv::Error>().and_then(io_of_csv))
            .or_else(|| match c.downcast_ref::<ExqError>()? {
                ExqError::Io(e) => Some(e),
                ExqError::Csv(e) => io_of_csv(e),
                _ => None,
            });
        io.is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit {
            method: FitCommand::Eqrn(a),
        } => commands::fit_eqrn(a),
        Command::Fit {
            method: FitCommand::Bernstein(a),
        } => commands::fit_bernstein(a),
        Command::Predict(a) => commands::predict(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Transform(a) => commands::transform(a),
        Command::Fires(a) => commands::fires(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

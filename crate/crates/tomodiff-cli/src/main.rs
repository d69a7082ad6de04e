//! Command-line workbench: dataset generation, measurement simulation,
//! score training, transition-time scans, reconstruction, evaluation, and
//! timing benchmarks.
//!
//! Exit codes: 0 success, 2 invalid configuration or arguments, 3 numerical
//! failure, 4 IO failure.

mod commands;

use clap::{Parser, Subcommand};
use tomodiff::TomoError;

#[derive(Parser)]
#[command(name = "tomodiff", version, about = "Travel-time tomography workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantom datasets with disjoint train/test seed ranges.
    Datagen(commands::DatagenArgs),
    /// Simulate noisy first-arrival measurements for one truth raster.
    Simulate(commands::SimulateArgs),
    /// Train a denoiser on a dataset manifest.
    TrainScore(commands::TrainScoreArgs),
    /// Scan the orthogonal Fisher divergence and select transition times.
    FisherScan(commands::FisherScanArgs),
    /// Reconstruct a velocity field (methods: dps, subspace-dps, lbfgs).
    Reconstruct(commands::ReconstructArgs),
    /// Compare reconstructions in a results directory against truths.
    Evaluate(commands::EvaluateArgs),
    /// Time full-space against subspace sampling with shared seeds.
    Bench(commands::BenchArgs),
}

fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<TomoError>() {
        Some(TomoError::InvalidArgument(_)) | Some(TomoError::Format { .. }) => 2,
        Some(TomoError::Io(_)) => 4,
        Some(_) => 3,
        None => {
            if err.downcast_ref::<std::io::Error>().is_some() {
                4
            } else {
                2
            }
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Datagen(args) => commands::datagen(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::TrainScore(args) => commands::train_score(args),
        Command::FisherScan(args) => commands::fisher_scan(args),
        Command::Reconstruct(args) => commands::reconstruct(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Bench(args) => commands::bench(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

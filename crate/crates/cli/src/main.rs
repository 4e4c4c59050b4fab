mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "hybseq",
    version,
    about = "DNA hybridisation yield prediction and library screening"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every stochastic step (generation, splits, init, dropout).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Nearest-neighbour parameter file.
    #[arg(long, global = true, env = "HYBSEQ_PARAMS")]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled pair dataset with the thermodynamic oracle.
    Generate(commands::GenerateArgs),
    /// Extract the nine pair features from a dataset.
    Features(commands::FeaturesArgs),
    /// Train a network on a dataset's training split.
    Train(commands::TrainArgs),
    /// Evaluate a trained network or a discriminant baseline.
    Eval(commands::EvalArgs),
    /// Predict yields for pairs with a trained network.
    Predict(commands::PredictArgs),
    /// Screen a FASTA library for cross-hybridising pairs.
    Design(commands::DesignArgs),
    /// Time batched inference.
    Bench(commands::BenchArgs),
    /// Oracle yields and energies for a pair or a single strand.
    Thermo(commands::ThermoArgs),
    /// Semi-global alignment score of two sequences.
    Align(commands::AlignArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

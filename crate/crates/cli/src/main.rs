//! `disentangle`: data generation, two-step training, probes, the straddle
//! backtest and the gradient audit from the command line.

mod artifacts;
mod commands;
mod config;
mod error;
mod probe;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use disentangle::experiments::VolSource;

use crate::config::{Experiment, Overrides};
use crate::error::CliError;
use crate::probe::{ProbeKind, Space};

#[derive(Debug, Parser)]
#[command(name = "disentangle", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset and write it as CSV.
    Gen(GenArgs),
    /// Train both stages and write the checkpoint, history and metrics.
    Train(TrainArgs),
    /// Run a probe against a trained run.
    Probe(ProbeArgs),
    /// Run the straddle backtest over the panel's test span.
    Backtest(BacktestArgs),
    /// Finite-difference audit of every differentiable op.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, clap::Args)]
pub struct GenArgs {
    pub experiment: Experiment,
    /// CAPM periods.
    #[arg(long)]
    pub periods: Option<usize>,
    /// CAPM or panel assets.
    #[arg(long)]
    pub assets: Option<usize>,
    #[command(flatten)]
    pub common: Overrides,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub experiment: Option<Experiment>,
    /// Directory written by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub common: Overrides,
}

#[derive(Debug, clap::Args)]
pub struct ProbeArgs {
    #[arg(value_enum)]
    pub probe: ProbeKind,
    /// Output directory of `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum, default_value = "Z")]
    pub space: Space,
    /// `label`, or a factor of the experiment (`background`; `beta`,
    /// `e_rm`; `beta`, `rho`, `vol1`, `vol5`).
    #[arg(long, default_value = "label")]
    pub target: String,
    /// Components, PCA dimensions before logreg, bins, neighbours, swap
    /// sources or interpolation steps, depending on the probe.
    #[arg(long)]
    pub k: Option<usize>,
    /// Sample the retrieval or interpolation starts from.
    #[arg(long, default_value_t = 0)]
    pub query: usize,
    /// Interpolation end point.
    #[arg(long, default_value_t = 1)]
    pub other: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to `<run>/probes`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Classifier {
    Z,
    X,
    Oracle,
    Random,
}

impl From<Classifier> for VolSource {
    fn from(c: Classifier) -> Self {
        match c {
            Classifier::Z => VolSource::Z,
            Classifier::X => VolSource::X,
            Classifier::Oracle => VolSource::Oracle,
            Classifier::Random => VolSource::Random,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct BacktestArgs {
    #[arg(long, value_enum)]
    pub classifier: Classifier,
    /// Trained panel run; required by the Z classifier.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Directory with `returns.csv` and `market.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub common: Overrides,
}

#[derive(Debug, clap::Args)]
pub struct GradcheckArgs {
    /// Random points per op.
    #[arg(long, default_value_t = 10)]
    pub points: u64,
    #[command(flatten)]
    pub common: Overrides,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Probe(a) => probe::probe(a),
        Command::Backtest(a) => commands::backtest(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
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

//! Output files and the inputs shared between subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use disentangle::datagen::synth::POSITIONS;
use disentangle::datagen::{load_returns_csv, RawPanel, SampleSet};
use disentangle::experiments::{simulate_panel, synth_dataset, InputScaler};
use disentangle::nets::{load_checkpoint, ModelBundle};
use serde::Serialize;

use crate::config::{Experiment, RunConfig};
use crate::error::CliError;

pub const ECHO: &str = "config.echo.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const SCALER: &str = "scaler.json";
pub const METRICS: &str = "metrics.json";

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct Echo<'a, A: Serialize> {
    command: &'a str,
    args: A,
    config: &'a RunConfig,
}

/// Writes `config.echo.json`: the subcommand, its own arguments and the
/// effective run configuration.
pub fn write_echo<A: Serialize>(dir: &Path, command: &str, args: A, config: &RunConfig) -> Result<(), CliError> {
    write_json(&dir.join(ECHO), &Echo { command, args, config })
}

/// The effective configuration recorded in a run directory.
pub fn read_echo(run: &Path) -> Result<RunConfig, CliError> {
    let path = run.join(ECHO);
    let text = fs::read_to_string(&path).map_err(|_| CliError::usage(format!("no run found at {}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let config = value
        .get("config")
        .cloned()
        .ok_or_else(|| CliError::usage(format!("{} has no `config` entry", path.display())))?;
    Ok(serde_json::from_value(config)?)
}

pub struct TrainedRun {
    pub config: RunConfig,
    pub bundle: ModelBundle,
    pub scaler: Option<InputScaler>,
}

pub fn load_run(run: &Path) -> Result<TrainedRun, CliError> {
    let config = read_echo(run)?;
    let ckpt = run.join(CHECKPOINT);
    if !ckpt.is_file() {
        return Err(CliError::usage(format!("checkpoint not found: {}", ckpt.display())));
    }
    let bundle = load_checkpoint(&ckpt)?;
    let scaler_path = run.join(SCALER);
    let scaler = if scaler_path.is_file() {
        let text = fs::read_to_string(&scaler_path).map_err(|e| CliError::io(&scaler_path, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    Ok(TrainedRun { config, bundle, scaler })
}

fn existing(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    if !dir.is_dir() {
        return Err(CliError::usage(format!("dataset directory not found: {}", dir.display())));
    }
    let path = dir.join(name);
    if !path.is_file() {
        return Err(CliError::usage(format!("dataset file not found: {}", path.display())));
    }
    Ok(path)
}

/// Samples of a synthetic or CAPM run: read from `cfg.data` when set,
/// generated from the seed otherwise. CAPM dimensions in `cfg` are updated
/// to match files read from disk.
pub fn load_samples(cfg: &mut RunConfig) -> Result<SampleSet, CliError> {
    match (&cfg.data, cfg.experiment) {
        (_, Experiment::Panel) => Err(CliError::usage("the panel experiment has no sample files")),
        (Some(dir), e) => {
            let data = existing(dir, "dataset.csv")?;
            let meta = existing(dir, "meta.csv")?;
            let classes = e.synth_kind().map(|_| POSITIONS);
            let set = SampleSet::read_csv(&data, Some(&meta), classes)?;
            if e == Experiment::Capm {
                let d = &mut cfg.capm.data;
                d.n_periods = set.n_classes();
                d.days = set.width() / 2;
                d.n_assets = set.len() / set.n_classes().max(1);
            }
            Ok(set)
        }
        (None, Experiment::Capm) => {
            let (_, set) = disentangle::datagen::gen_capm(&cfg.capm.data, cfg.seed)?;
            Ok(set)
        }
        (None, _) => Ok(synth_dataset(cfg.synth.kind, cfg.synth.side, cfg.seed)?),
    }
}

/// Daily panel of a panel run: `returns.csv` and `market.csv` from
/// `cfg.data`, or simulated from the seed.
pub fn load_panel(cfg: &RunConfig) -> Result<RawPanel, CliError> {
    match &cfg.data {
        Some(dir) => {
            let returns = existing(dir, "returns.csv")?;
            let market = existing(dir, "market.csv")?;
            Ok(load_returns_csv(&returns, &market)?)
        }
        None => Ok(simulate_panel(&cfg.panel, cfg.seed)?),
    }
}

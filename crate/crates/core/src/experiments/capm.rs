use serde::{Deserialize, Serialize};

use crate::datagen::{gen_capm, CapmConfig, QuantileBins, SampleSet};
use crate::error::{Error, Result};
use crate::nets::{BundleSpec, Dims, ModelBundle};
use crate::probes::{linear_probe, market_correlation, CodeSpace, LinearProbeConfig, ProbeReport};
use crate::two_step::{train, TrainConfig, TrainHistory};

use super::{codes_for, InputScaler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapmExperiment {
    pub data: CapmConfig,
    /// Architecture preset name.
    pub preset: String,
    pub s_dim: usize,
    pub z_dim: usize,
    /// Z-score every input column before training and probing.
    pub standardize_inputs: bool,
    pub beta_groups: usize,
    pub market_groups: usize,
    pub train: TrainConfig,
    pub probe: LinearProbeConfig,
}

impl Default for CapmExperiment {
    fn default() -> Self {
        Self {
            data: CapmConfig::default(),
            preset: "stocks".into(),
            s_dim: 20,
            z_dim: 50,
            standardize_inputs: true,
            beta_groups: 4,
            market_groups: 3,
            train: TrainConfig::default(),
            probe: LinearProbeConfig::default(),
        }
    }
}

impl CapmExperiment {
    /// 50 periods × 500 assets.
    pub fn reduced() -> Self {
        Self {
            data: CapmConfig {
                n_periods: 50,
                n_assets: 500,
                ..CapmConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn bundle_spec(&self) -> Result<BundleSpec> {
        BundleSpec::preset(
            &self.preset,
            Dims {
                input: 2 * self.data.days,
                s: self.s_dim,
                z: self.z_dim,
                classes: self.data.n_periods,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapmEvaluation {
    pub reports: Vec<ProbeReport>,
    /// `|r|` between the first S component and the period's mean market return.
    pub market_correlation: f64,
}

impl CapmEvaluation {
    pub fn accuracy(&self, space: CodeSpace, target: &str) -> Option<f64> {
        self.reports
            .iter()
            .find(|r| r.space == space && r.target == target)
            .map(|r| r.accuracy)
    }
}

pub struct CapmRun {
    pub samples: SampleSet,
    pub scaler: Option<InputScaler>,
    pub bundle: ModelBundle,
    pub history: TrainHistory,
}

/// Generates the market, trains both stages on period labels.
pub fn train_capm(cfg: &CapmExperiment, seed: u64) -> Result<CapmRun> {
    let (_, samples) = gen_capm(&cfg.data, seed)?;
    train_capm_on(cfg, samples, seed)
}

/// Trains on already generated CAPM samples.
pub fn train_capm_on(cfg: &CapmExperiment, samples: SampleSet, seed: u64) -> Result<CapmRun> {
    let scaler = cfg.standardize_inputs.then(|| InputScaler::fit(samples.x()));
    let train_set = match &scaler {
        Some(s) => s.apply_set(&samples)?,
        None => samples.clone(),
    };
    let mut bundle = ModelBundle::build(&cfg.bundle_spec()?, seed)?;
    let tc = TrainConfig { seed, ..cfg.train };
    let history = train(&mut bundle, &train_set, &tc)?;
    Ok(CapmRun {
        samples,
        scaler,
        bundle,
        history,
    })
}

/// β-group and E[R_m]-group probes on S, Z and X, plus the market check.
pub fn evaluate_capm(
    bundle: &ModelBundle,
    samples: &SampleSet,
    scaler: Option<&InputScaler>,
    cfg: &CapmExperiment,
    seed: u64,
) -> Result<CapmEvaluation> {
    let t = capm_targets(samples, cfg)?;
    let x = match scaler {
        Some(s) => s.apply(samples.x())?,
        None => samples.x().clone(),
    };
    let (s, z) = codes_for(bundle, &x)?;
    let probe = LinearProbeConfig { seed, ..cfg.probe };
    let mut reports = Vec::new();
    for (space, codes) in [(CodeSpace::S, &s), (CodeSpace::Z, &z), (CodeSpace::X, &x)] {
        reports.push(linear_probe(codes, &t.beta, cfg.beta_groups, space, "beta", &probe)?);
        reports.push(linear_probe(codes, &t.e_rm, cfg.market_groups, space, "e_rm", &probe)?);
    }
    let market_correlation = market_correlation(&s, &t.periods, &t.market_mean)?;
    Ok(CapmEvaluation {
        reports,
        market_correlation,
    })
}

/// Group labels and market series of a CAPM sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct CapmTargets {
    /// β quantile group of every sample.
    pub beta: Vec<usize>,
    /// Quantile group of the period's expected market return.
    pub e_rm: Vec<usize>,
    pub periods: Vec<usize>,
    /// Mean market return of each period's window.
    pub market_mean: Vec<f64>,
}

pub fn capm_targets(samples: &SampleSet, cfg: &CapmExperiment) -> Result<CapmTargets> {
    let meta = samples
        .meta()
        .ok_or_else(|| Error::invalid("CAPM samples carry no meta"))?;
    let beta = meta.column("beta")?;
    let e_rm = meta.column("e_rm")?;
    let periods: Vec<usize> = meta.column("period")?.iter().map(|&p| p as usize).collect();
    let n_periods = periods.iter().max().map_or(0, |m| m + 1);

    let beta_bins = QuantileBins::fit(&beta, cfg.beta_groups)?;
    let mut per_period = vec![f64::NAN; n_periods];
    for (&p, &e) in periods.iter().zip(&e_rm) {
        per_period[p] = e;
    }
    let known: Vec<f64> = per_period.iter().copied().filter(|v| v.is_finite()).collect();
    let market_bins = QuantileBins::fit(&known, cfg.market_groups)?;

    let days = samples.width() / 2;
    let mut market_mean = vec![0.0; n_periods];
    let mut seen = vec![false; n_periods];
    for (i, &p) in periods.iter().enumerate() {
        if !seen[p] {
            let row = samples.x().row(i);
            market_mean[p] = row[days..].iter().sum::<f64>() / days as f64;
            seen[p] = true;
        }
    }
    Ok(CapmTargets {
        beta: beta_bins.assign_all(&beta),
        e_rm: market_bins.assign_all(&e_rm),
        periods,
        market_mean,
    })
}

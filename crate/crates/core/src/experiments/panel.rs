use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datagen::{
    augment_noise, compute_measures, window_quarters, DailyPanelConfig, QuantileBins, QuarterSpan,
    RawPanel, SampleSet, StockMeasures,
};
use crate::error::{Error, Result};
use crate::nets::{BundleSpec, Dims, ModelBundle};
use crate::options::{
    run_backtest, BacktestConfig, BacktestReport, OracleVol, RandomClassVol, VolForecaster,
};
use crate::probes::{logreg_eval, logreg_fit, market_correlation, CodeSpace, LogReg, LogRegConfig, ProbeReport};
use crate::two_step::{encode, train, TrainConfig, TrainHistory};

use super::{codes_for, InputScaler};

const YEAR_DAYS: f64 = 252.0;

/// Where the backtest's predicted volatility comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolSource {
    Z,
    X,
    Oracle,
    Random,
}

impl VolSource {
    pub fn needs_model(self) -> bool {
        matches!(self, VolSource::Z)
    }
}

impl fmt::Display for VolSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VolSource::Z => "z",
            VolSource::X => "x",
            VolSource::Oracle => "oracle",
            VolSource::Random => "random",
        })
    }
}

impl FromStr for VolSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z" | "Z" => Ok(VolSource::Z),
            "x" | "X" => Ok(VolSource::X),
            "oracle" => Ok(VolSource::Oracle),
            "random" => Ok(VolSource::Random),
            other => Err(Error::invalid(format!(
                "unknown classifier `{other}` (expected z, x, oracle or random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelExperiment {
    pub sim: DailyPanelConfig,
    /// Architecture preset name.
    pub preset: String,
    pub train_span: QuarterSpan,
    pub test_span: QuarterSpan,
    /// Standard deviation of the noise added to training windows.
    pub augment_sigma: f64,
    pub standardize_inputs: bool,
    pub s_dim: usize,
    pub z_dim: usize,
    /// Trailing days for β̂ and ρ̂.
    pub measure_window: usize,
    pub measure_classes: usize,
    pub train: TrainConfig,
    pub logreg: LogRegConfig,
    pub backtest: BacktestConfig,
    /// Horizon of the oracle's realised volatility.
    pub oracle_horizon: usize,
}

impl Default for PanelExperiment {
    fn default() -> Self {
        Self {
            sim: DailyPanelConfig::default(),
            preset: "stocks".into(),
            train_span: QuarterSpan::new(1976, 2009),
            test_span: QuarterSpan::new(2010, 2016),
            augment_sigma: 0.04,
            standardize_inputs: true,
            s_dim: 20,
            z_dim: 50,
            measure_window: 252,
            measure_classes: 4,
            train: TrainConfig::default(),
            logreg: LogRegConfig {
                tol: 1e-5,
                max_iter: 1000,
                ..LogRegConfig::default()
            },
            backtest: BacktestConfig::default(),
            oracle_horizon: 1,
        }
    }
}

impl PanelExperiment {
    pub fn bundle_spec(&self) -> Result<BundleSpec> {
        BundleSpec::preset(
            &self.preset,
            Dims {
                input: 2 * self.train_span.days,
                s: self.s_dim,
                z: self.z_dim,
                classes: self.train_span.n_labels(),
            },
        )
    }

    fn validate(&self) -> Result<()> {
        if self.train_span.days != self.test_span.days {
            return Err(Error::invalid("train and test windows must have the same length"));
        }
        if self.train_span.end_year >= self.test_span.start_year {
            return Err(Error::invalid("test span must start after the training span"));
        }
        Ok(())
    }
}

/// Windowed samples of one span and the stock measures at each window's end.
#[derive(Debug, Clone)]
pub struct PanelSplit {
    pub samples: SampleSet,
    pub measures: StockMeasures,
}

impl PanelSplit {
    pub fn build(panel: &RawPanel, span: &QuarterSpan, window: usize) -> Result<Self> {
        let (samples, _) = window_quarters(panel, span)?;
        let meta = samples
            .meta()
            .ok_or_else(|| Error::invalid("windowed samples carry no meta"))?;
        let tickers = meta.column("ticker")?;
        let ends = meta.column("end_day")?;
        let anchors: Vec<(usize, usize)> = tickers
            .iter()
            .zip(&ends)
            .map(|(&t, &d)| (t as usize, d as usize))
            .collect();
        let measures = compute_measures(panel, &anchors, window)?;
        Ok(Self { samples, measures })
    }

    /// Rows of `x` that have measures.
    pub fn kept_rows(&self, x: &Tensor) -> Tensor {
        x.select_rows(&self.measures.kept)
    }
}

/// Names of the stock measures probed from the codes.
pub const MEASURES: [&str; 4] = ["beta", "rho", "vol1", "vol5"];

/// Quantile group of every measure on `split`'s kept rows, with bins
/// fitted on `reference` (the training span).
pub fn measure_groups(
    reference: &PanelSplit,
    split: &PanelSplit,
    k: usize,
) -> Result<Vec<(&'static str, Vec<usize>)>> {
    MEASURES
        .iter()
        .map(|&m| {
            let bins = QuantileBins::fit(reference.measures.get(m)?, k)?;
            Ok((m, bins.assign_all(split.measures.get(m)?)))
        })
        .collect()
}

pub struct PanelRun {
    pub train: PanelSplit,
    pub test: PanelSplit,
    pub scaler: Option<InputScaler>,
    pub bundle: ModelBundle,
    pub history: TrainHistory,
}

/// Windows both spans, trains on noisy training windows labelled by quarter.
pub fn train_panel(cfg: &PanelExperiment, panel: &RawPanel, seed: u64) -> Result<PanelRun> {
    cfg.validate()?;
    let train_split = PanelSplit::build(panel, &cfg.train_span, cfg.measure_window)?;
    let test_split = PanelSplit::build(panel, &cfg.test_span, cfg.measure_window)?;
    let noisy = augment_noise(&train_split.samples, cfg.augment_sigma, seed.wrapping_add(3))?;
    let scaler = cfg.standardize_inputs.then(|| InputScaler::fit(noisy.x()));
    let data = match &scaler {
        Some(s) => s.apply_set(&noisy)?,
        None => noisy,
    };
    let mut bundle = ModelBundle::build(&cfg.bundle_spec()?, seed)?;
    let history = train(&mut bundle, &data, &TrainConfig { seed, ..cfg.train })?;
    Ok(PanelRun {
        train: train_split,
        test: test_split,
        scaler,
        bundle,
        history,
    })
}

fn scaled(scaler: Option<&InputScaler>, x: &Tensor) -> Result<Tensor> {
    match scaler {
        Some(s) => s.apply(x),
        None => Ok(x.clone()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelEvaluation {
    /// Logistic-regression probes of each stock measure from S, Z and X,
    /// fitted on the training span and scored on the test span.
    pub reports: Vec<ProbeReport>,
    /// `|r|` between the first S component on the test span and each
    /// quarter's mean market return.
    pub market_correlation: f64,
}

impl PanelEvaluation {
    pub fn accuracy(&self, space: CodeSpace, target: &str) -> Option<f64> {
        self.reports
            .iter()
            .find(|r| r.space == space && r.target == target)
            .map(|r| r.accuracy)
    }
}

/// Code rows (with measures) of a split in the requested space.
fn split_codes(run: &PanelRun, split: &PanelSplit, space: CodeSpace) -> Result<Tensor> {
    let x = scaled(run.scaler.as_ref(), &split.kept_rows(split.samples.x()))?;
    match space {
        CodeSpace::X => Ok(x),
        CodeSpace::S => encode(&run.bundle.enc_s, &x),
        CodeSpace::Z => encode(&run.bundle.enc_z, &x),
    }
}

pub fn evaluate_panel(run: &PanelRun, cfg: &PanelExperiment, seed: u64) -> Result<PanelEvaluation> {
    let k = cfg.measure_classes;
    let mut reports = Vec::new();
    for space in [CodeSpace::S, CodeSpace::Z, CodeSpace::X] {
        let xtr = split_codes(run, &run.train, space)?;
        let xte = split_codes(run, &run.test, space)?;
        for measure in MEASURES {
            let bins = QuantileBins::fit(run.train.measures.get(measure)?, k)?;
            let ytr = bins.assign_all(run.train.measures.get(measure)?);
            let yte = bins.assign_all(run.test.measures.get(measure)?);
            if yte.is_empty() {
                return Err(Error::invalid("test span has no samples with measures"));
            }
            let model = logreg_fit(&xtr, &ytr, k, &cfg.logreg)?;
            let acc = logreg_eval(&model, &xte, &yte)?;
            reports.push(ProbeReport::new("logreg", space, measure, acc, k, ytr.len(), yte.len(), seed));
        }
    }

    let test = &run.test.samples;
    let x = scaled(run.scaler.as_ref(), test.x())?;
    let (s, _) = codes_for(&run.bundle, &x)?;
    let quarters = test.y();
    let n_q = test.n_classes();
    let days = test.width() / 2;
    let mut market = vec![0.0; n_q];
    for (i, &q) in quarters.iter().enumerate() {
        market[q] = test.x().row(i)[days..].iter().sum::<f64>() / days as f64;
    }
    Ok(PanelEvaluation {
        reports,
        market_correlation: market_correlation(&s, quarters, &market)?,
    })
}

/// Predicts a volatility class from the trailing window's codes and maps
/// it to the class representative, annualised.
pub struct ClassifierVol<'a> {
    bundle: Option<&'a ModelBundle>,
    scaler: Option<&'a InputScaler>,
    model: LogReg,
    representative: Vec<f64>,
    days: usize,
    cache: HashMap<usize, Vec<Option<f64>>>,
}

impl ClassifierVol<'_> {
    fn window(panel: &RawPanel, asset: usize, day: usize, days: usize) -> Option<Vec<f64>> {
        if day + 1 < days {
            return None;
        }
        let range = day + 1 - days..=day;
        let stock: Option<Vec<f64>> = range.clone().map(|d| panel.returns[asset][d]).collect();
        let mut row = stock?;
        row.extend(range.map(|d| panel.market[d]));
        Some(row)
    }

    fn forecast_day(&self, panel: &RawPanel, day: usize) -> Result<Vec<Option<f64>>> {
        let rows: Vec<(usize, Vec<f64>)> = (0..panel.tickers.len())
            .filter_map(|a| Self::window(panel, a, day, self.days).map(|r| (a, r)))
            .collect();
        let mut out = vec![None; panel.tickers.len()];
        if rows.is_empty() {
            return Ok(out);
        }
        let x = Tensor::from_rows(&rows.iter().map(|r| r.1.clone()).collect::<Vec<_>>())?;
        let mut feats = scaled(self.scaler, &x)?;
        if let Some(b) = self.bundle {
            feats = encode(&b.enc_z, &feats)?;
        }
        for ((a, _), c) in rows.iter().zip(self.model.predict(&feats)?) {
            out[*a] = Some(self.representative[c]);
        }
        Ok(out)
    }
}

impl VolForecaster for ClassifierVol<'_> {
    fn forecast(&mut self, panel: &RawPanel, asset: usize, day: usize) -> Result<Option<f64>> {
        if !self.cache.contains_key(&day) {
            self.cache.clear();
            let v = self.forecast_day(panel, day)?;
            self.cache.insert(day, v);
        }
        Ok(self.cache[&day][asset])
    }
}

/// Training-span bins of next-five-day volatility.
fn vol_bins(split: &PanelSplit, k: usize) -> Result<QuantileBins> {
    QuantileBins::fit(&split.measures.vol5, k)
}

fn annualised(bins: &QuantileBins) -> Vec<f64> {
    bins.representative.iter().map(|v| v * YEAR_DAYS.sqrt()).collect()
}

/// Forecaster for `source`. `run` is required for the Z classifier;
/// the X classifier and the random baseline only need the training windows.
pub fn panel_vol_forecaster<'a>(
    source: VolSource,
    panel: &RawPanel,
    run: Option<&'a PanelRun>,
    cfg: &PanelExperiment,
    seed: u64,
) -> Result<Box<dyn VolForecaster + 'a>> {
    let k = cfg.measure_classes;
    if source == VolSource::Oracle {
        return Ok(Box::new(OracleVol {
            horizon: cfg.oracle_horizon,
        }));
    }
    let owned;
    let train_split = match run {
        Some(r) => &r.train,
        None => {
            owned = PanelSplit::build(panel, &cfg.train_span, cfg.measure_window)?;
            &owned
        }
    };
    let bins = vol_bins(train_split, k)?;
    match source {
        VolSource::Random => Ok(Box::new(RandomClassVol::new(annualised(&bins), seed)?)),
        VolSource::Z | VolSource::X => {
            let (bundle, scaler) = match (source, run) {
                (VolSource::Z, Some(r)) => (Some(&r.bundle), r.scaler.as_ref()),
                (VolSource::Z, None) => {
                    return Err(Error::invalid("the Z classifier needs a trained model"));
                }
                _ => (None, None),
            };
            let x = scaled(scaler, &train_split.kept_rows(train_split.samples.x()))?;
            let feats = match bundle {
                Some(b) => encode(&b.enc_z, &x)?,
                None => x,
            };
            let y = bins.assign_all(&train_split.measures.vol5);
            let model = logreg_fit(&feats, &y, k, &cfg.logreg)?;
            Ok(Box::new(ClassifierVol {
                bundle,
                scaler,
                model,
                representative: annualised(&bins),
                days: cfg.train_span.days,
                cache: HashMap::new(),
            }))
        }
        VolSource::Oracle => unreachable!(),
    }
}

/// Runs the straddle backtest over the test span, preceded by the trailing
/// window needed on its first day.
pub fn backtest_test_span(
    panel: &RawPanel,
    forecaster: &mut dyn VolForecaster,
    cfg: &PanelExperiment,
) -> Result<BacktestReport> {
    let first = panel
        .dates
        .iter()
        .position(|d| chrono::Datelike::year(d) >= cfg.test_span.start_year)
        .ok_or_else(|| Error::invalid("panel has no days in the test span"))?;
    let last = panel
        .dates
        .iter()
        .rposition(|d| chrono::Datelike::year(d) <= cfg.test_span.end_year)
        .unwrap_or(panel.n_days() - 1);
    let window = cfg.backtest.vol_window.max(cfg.train_span.days);
    let start = (first + 1).saturating_sub(window);
    run_backtest(&panel.slice_days(start..last + 1)?, forecaster, &cfg.backtest)
}

/// Simulated panel for the experiment.
pub fn simulate_panel(cfg: &PanelExperiment, seed: u64) -> Result<RawPanel> {
    crate::datagen::simulate_daily_panel(&cfg.sim, seed)
}

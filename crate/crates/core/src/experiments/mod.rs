//! End-to-end experiment pipelines shared by the command-line runner and
//! the acceptance tests: synthetic rectangles, the simulated CAPM market
//! and the windowed daily panel with its straddle backtest.

mod capm;
mod panel;
mod synth;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datagen::SampleSet;
use crate::error::{Error, Result};
use crate::nets::ModelBundle;
use crate::probes::{column_stats, apply_standardize};
use crate::two_step::encode;

pub use capm::{
    capm_targets, evaluate_capm, train_capm, train_capm_on, CapmEvaluation, CapmExperiment, CapmRun,
    CapmTargets,
};
pub use panel::{
    backtest_test_span, evaluate_panel, measure_groups, panel_vol_forecaster, simulate_panel, train_panel,
    ClassifierVol, PanelEvaluation, PanelExperiment, PanelRun, PanelSplit, VolSource, MEASURES,
};
pub use synth::{
    evaluate_synth, synth_dataset, train_synth, SynthEvaluation, SynthExperiment, SynthKind,
};

/// Per-column z-scoring fitted once on the training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl InputScaler {
    pub fn fit(x: &Tensor) -> Self {
        let (mean, sd) = column_stats(x);
        Self { mean, sd }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.mean.len() {
            return Err(Error::shape("scaled input", x.shape(), &[x.rows(), self.mean.len()]));
        }
        Ok(apply_standardize(x, &self.mean, &self.sd))
    }

    pub fn apply_set(&self, set: &SampleSet) -> Result<SampleSet> {
        SampleSet::new(
            self.apply(set.x())?,
            set.y().to_vec(),
            set.n_classes(),
            set.meta().cloned(),
        )
    }
}

/// Eval-mode `(S, Z)` codes of every row of `x`.
pub fn codes_for(bundle: &ModelBundle, x: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((encode(&bundle.enc_s, x)?, encode(&bundle.enc_z, x)?))
}

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::logreg::{logreg_eval, logreg_fit, LogRegConfig};
use super::pca::{pca_fit, pca_project};
use super::score::{stratified_split, CodeSpace, ProbeReport};

/// Logistic-regression probe, optionally on the leading principal
/// components of the codes (fitted on the train split only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearProbeConfig {
    pub pca_components: Option<usize>,
    pub train_fraction: f64,
    pub logreg: LogRegConfig,
    pub seed: u64,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        Self {
            pca_components: Some(2),
            train_fraction: 0.8,
            logreg: LogRegConfig::default(),
            seed: 0,
        }
    }
}

impl LinearProbeConfig {
    pub fn direct() -> Self {
        Self {
            pca_components: None,
            ..Self::default()
        }
    }

    pub fn name(&self) -> String {
        match self.pca_components {
            Some(k) => format!("pca{k}-logreg"),
            None => "logreg".into(),
        }
    }
}

pub fn linear_probe(
    codes: &Tensor,
    labels: &[usize],
    classes: usize,
    space: CodeSpace,
    target: &str,
    cfg: &LinearProbeConfig,
) -> Result<ProbeReport> {
    if codes.rows() != labels.len() {
        return Err(Error::invalid("codes and labels are not aligned"));
    }
    let (train, test) = stratified_split(labels, cfg.train_fraction, cfg.seed);
    if test.is_empty() {
        return Err(Error::invalid("probe split left no test samples"));
    }
    let mut xtr = codes.select_rows(&train);
    let mut xte = codes.select_rows(&test);
    if let Some(k) = cfg.pca_components {
        let pca = pca_fit(&xtr, k.min(codes.cols()))?;
        xtr = pca_project(&pca, &xtr)?;
        xte = pca_project(&pca, &xte)?;
    }
    let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let yte: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let model = logreg_fit(&xtr, &ytr, classes, &cfg.logreg)?;
    let acc = logreg_eval(&model, &xte, &yte)?;
    Ok(ProbeReport::new(
        &cfg.name(),
        space,
        target,
        acc,
        classes,
        train.len(),
        test.len(),
        cfg.seed,
    ))
}

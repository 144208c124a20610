use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode, Tensor};
use crate::error::{Error, Result};
use crate::nets::{classifier, Network, Optimizer, OptimizerConfig};
use crate::two_step::{accuracy, BatchSampler};

/// Which representation a probe reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CodeSpace {
    S,
    Z,
    X,
}

impl fmt::Display for CodeSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodeSpace::S => "S",
            CodeSpace::Z => "Z",
            CodeSpace::X => "X",
        })
    }
}

impl FromStr for CodeSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S" | "s" => Ok(CodeSpace::S),
            "Z" | "z" => Ok(CodeSpace::Z),
            "X" | "x" => Ok(CodeSpace::X),
            other => Err(Error::invalid(format!("unknown code space `{other}` (expected S, Z or X)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub probe: String,
    pub space: CodeSpace,
    pub target: String,
    pub accuracy: f64,
    pub error_rate: f64,
    pub chance: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl ProbeReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        probe: &str,
        space: CodeSpace,
        target: &str,
        accuracy: f64,
        classes: usize,
        n_train: usize,
        n_test: usize,
        seed: u64,
    ) -> Self {
        Self {
            probe: probe.into(),
            space,
            target: target.into(),
            accuracy,
            error_rate: 1.0 - accuracy,
            chance: 1.0 / classes.max(1) as f64,
            n_train,
            n_test,
            seed,
        }
    }
}

/// Stratified split: within every class a seeded shuffle sends
/// `round(train_fraction · count)` samples to train (at least one) and the
/// rest to test. Both index lists are sorted.
pub fn stratified_split(y: &[usize], train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let classes = y.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &c) in y.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut idx in by_class {
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let cut = ((idx.len() as f64 * train_fraction).round() as usize).clamp(1, idx.len());
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Neural probe: `layers` dense+ReLU → batch-norm blocks of `width` units
/// (default: the code dimension) and a softmax head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub layers: usize,
    pub width: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub train_fraction: f64,
    /// Standardise code columns with train-split statistics first.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            width: None,
            epochs: 60,
            batch_size: 128,
            optimizer: OptimizerConfig::adam(3e-3),
            train_fraction: 0.8,
            standardize: false,
            seed: 0,
        }
    }
}

/// Per-column mean and standard deviation (1 for constant columns).
pub fn column_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut sd = vec![0.0; d];
    for i in 0..n {
        for ((s, v), m) in sd.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    for s in &mut sd {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    (mean, sd)
}

pub fn apply_standardize(x: &Tensor, mean: &[f64], sd: &[f64]) -> Tensor {
    let mut out = x.clone();
    let d = x.cols();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let j = i % d;
        *v = (*v - mean[j]) / sd[j];
    }
    out
}

/// Trains a fresh probe network on `(x, y)`.
pub fn fit_probe(x: &Tensor, y: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<Network> {
    if x.rows() < 2 {
        return Err(Error::invalid("probe needs at least two training samples"));
    }
    let width = cfg.width.unwrap_or(x.cols()).max(1);
    let spec = classifier(x.cols(), &vec![width; cfg.layers], classes);
    let mut net = Network::build(&spec, cfg.seed ^ 0xB0)?;
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut sampler = BatchSampler::new(x.rows(), cfg.batch_size.max(2), cfg.seed ^ 0xB1);
    for _ in 0..cfg.epochs {
        for _ in 0..sampler.batches_per_epoch().max(1) {
            let idx = sampler.next_batch();
            let bx = x.select_rows(&idx);
            let by: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let mut g = Graph::new();
            let xv = g.constant(bx);
            let t = net.forward_on(&mut g, xv, Mode::Train, true)?;
            let loss = g.softmax_cross_entropy(t.output, &by)?;
            if !g.value(loss).item().is_finite() {
                return Err(Error::NonFinite("probe loss".into()));
            }
            g.backward(loss)?;
            let grads = net.collect_gradients(&g, &t);
            net.apply_gradients(&mut opt, &grads)?;
            net.update_running_stats(&t.batch_stats, idx.len());
        }
    }
    Ok(net)
}

/// Trains the neural probe on a stratified train split of `(codes,
/// labels)` and reports accuracy on the held-out part.
pub fn classification_score(
    codes: &Tensor,
    labels: &[usize],
    classes: usize,
    space: CodeSpace,
    target: &str,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    if codes.rows() != labels.len() {
        return Err(Error::invalid("codes and labels are not aligned"));
    }
    let (train, test) = stratified_split(labels, cfg.train_fraction, cfg.seed);
    if test.is_empty() {
        return Err(Error::invalid("probe split left no test samples"));
    }
    let xtr = codes.select_rows(&train);
    let (mean, sd) = if cfg.standardize {
        column_stats(&xtr)
    } else {
        (vec![0.0; codes.cols()], vec![1.0; codes.cols()])
    };
    let xtr = apply_standardize(&xtr, &mean, &sd);
    let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let net = fit_probe(&xtr, &ytr, classes, cfg)?;
    let xte = apply_standardize(&codes.select_rows(&test), &mean, &sd);
    let yte: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let acc = accuracy(&net.predict(&xte)?, &yte);
    Ok(ProbeReport::new(
        "score",
        space,
        target,
        acc,
        classes,
        train.len(),
        test.len(),
        cfg.seed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_and_disjoint() {
        let y: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let (tr, te) = stratified_split(&y, 0.8, 3);
        assert_eq!(tr.len(), 80);
        assert_eq!(te.len(), 20);
        for c in 0..4 {
            assert_eq!(te.iter().filter(|&&i| y[i] == c).count(), 5);
        }
        assert!(tr.iter().all(|i| !te.contains(i)));
        assert_eq!(stratified_split(&y, 0.8, 3), (tr, te));
    }

    #[test]
    fn code_space_parses() {
        assert_eq!("Z".parse::<CodeSpace>().unwrap(), CodeSpace::Z);
        assert!("W".parse::<CodeSpace>().is_err());
    }
}

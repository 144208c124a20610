use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::synth::RectGeometry;
use crate::datagen::{gen_synth1, gen_synth2, latent_ids, SampleSet};
use crate::error::{Error, Result};
use crate::nets::{BundleSpec, Dims, ModelBundle, OptimizerConfig};
use crate::probes::{
    classification_score, pca_fit, retrieve, separating_components, swap, z_histograms, CodeSpace,
    HistBin, ProbeConfig, ProbeReport,
};
use crate::two_step::{train, TrainConfig, TrainHistory};

use super::codes_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Synth1,
    Synth2,
}

impl SynthKind {
    /// Distinct background configurations.
    pub fn latent_classes(self) -> usize {
        match self {
            SynthKind::Synth1 => 2,
            SynthKind::Synth2 => 4,
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Synth1 => "synth1",
            SynthKind::Synth2 => "synth2",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synth1" => Ok(SynthKind::Synth1),
            "synth2" => Ok(SynthKind::Synth2),
            other => Err(Error::invalid(format!("unknown synthetic dataset `{other}`"))),
        }
    }
}

pub fn synth_dataset(kind: SynthKind, side: usize, seed: u64) -> Result<SampleSet> {
    match kind {
        SynthKind::Synth1 => gen_synth1(side, seed),
        SynthKind::Synth2 => gen_synth2(side, seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthExperiment {
    pub kind: SynthKind,
    /// Architecture preset name.
    pub preset: String,
    pub side: usize,
    pub s_dim: usize,
    pub z_dim: usize,
    /// The unique images are resampled to this many training rows.
    pub train_samples: usize,
    /// Rows drawn (with replacement) for the neural probes.
    pub probe_samples: usize,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub hist_bins: usize,
    pub retrieval_k: usize,
}

impl Default for SynthExperiment {
    fn default() -> Self {
        Self::new(SynthKind::Synth1)
    }
}

impl SynthExperiment {
    pub fn new(kind: SynthKind) -> Self {
        Self {
            kind,
            preset: "synth".into(),
            side: 32,
            s_dim: 4,
            z_dim: 4,
            train_samples: 1280,
            probe_samples: 2000,
            train: TrainConfig {
                stage2_iterations: 2000,
                adversary_optimizer: OptimizerConfig::sgd(0.5),
                ..TrainConfig::default()
            },
            probe: ProbeConfig {
                width: Some(16),
                epochs: 200,
                optimizer: OptimizerConfig::adam(0.01),
                ..ProbeConfig::default()
            },
            hist_bins: 20,
            retrieval_k: 5,
        }
    }

    pub fn bundle_spec(&self) -> Result<BundleSpec> {
        BundleSpec::preset(
            &self.preset,
            Dims {
                input: self.side * self.side,
                s: self.s_dim,
                z: self.z_dim,
                classes: crate::datagen::synth::POSITIONS,
            },
        )
    }
}

/// Trains on `base` (the unique images) resampled to `train_samples` rows.
pub fn train_synth(
    cfg: &SynthExperiment,
    base: &SampleSet,
    seed: u64,
) -> Result<(ModelBundle, TrainHistory)> {
    let data = base.resample(cfg.train_samples, seed.wrapping_add(1))?;
    let mut bundle = ModelBundle::build(&cfg.bundle_spec()?, seed)?;
    let tc = TrainConfig { seed, ..cfg.train };
    let history = train(&mut bundle, &data, &tc)?;
    Ok((bundle, history))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthEvaluation {
    /// Location and background probes on S and Z.
    pub reports: Vec<ProbeReport>,
    pub z_pca_ratios: Vec<f64>,
    pub separating_components: Vec<usize>,
    /// Share of `(S_i, Z_j)` swaps whose decoded image shows position `i`
    /// on background `j` by the pixel rule.
    pub swap_accuracy: f64,
    /// Mean share of Z-space nearest neighbours with the query's background.
    pub retrieval_background: f64,
    #[serde(skip)]
    pub histograms: Vec<HistBin>,
}

impl SynthEvaluation {
    pub fn accuracy(&self, space: CodeSpace, target: &str) -> Option<f64> {
        self.reports
            .iter()
            .find(|r| r.space == space && r.target == target)
            .map(|r| r.accuracy)
    }
}

fn background_bits(geo: &RectGeometry, img: &[f64], halves: usize) -> Vec<f64> {
    if halves == 1 {
        return vec![geo.decode_background(img, 0..geo.side)];
    }
    let half = geo.side / 2;
    vec![
        geo.decode_background(img, 0..half),
        geo.decode_background(img, half..geo.side),
    ]
}

pub fn evaluate_synth(
    bundle: &ModelBundle,
    base: &SampleSet,
    cfg: &SynthExperiment,
    seed: u64,
) -> Result<SynthEvaluation> {
    let meta = base
        .meta()
        .ok_or_else(|| Error::invalid("synthetic images carry no latent meta"))?;
    let geo = RectGeometry::new(cfg.side)?;
    if base.width() != geo.pixels() {
        return Err(Error::shape("synthetic images", base.x().shape(), &[base.len(), geo.pixels()]));
    }
    let n_latent = cfg.kind.latent_classes();

    let probe_set = base.resample(cfg.probe_samples, seed.wrapping_add(2))?;
    let (s, z) = codes_for(bundle, probe_set.x())?;
    let lat = latent_ids(&probe_set)?;
    let probe = ProbeConfig { seed, ..cfg.probe };
    let mut reports = Vec::new();
    for (space, codes) in [(CodeSpace::S, &s), (CodeSpace::Z, &z)] {
        reports.push(classification_score(codes, probe_set.y(), probe_set.n_classes(), space, "location", &probe)?);
        reports.push(classification_score(codes, &lat, n_latent, space, "background", &probe)?);
    }

    let (s_base, z_base) = codes_for(bundle, base.x())?;
    let base_lat = latent_ids(base)?;
    let z_pca_ratios = pca_fit(&z_base, cfg.z_dim)?.ratios;
    let separating = separating_components(&z_base, &base_lat)?;
    let histograms = z_histograms(&z_base, &base_lat, cfg.hist_bins)?;

    let n = base.len();
    let halves = meta.columns.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let s_rows = s_base.select_rows(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let z_rows = z_base.select_rows(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let decoded = swap(&bundle.decoder, &s_rows, &z_rows)?;
    let hits = pairs
        .iter()
        .enumerate()
        .filter(|(r, (i, j))| {
            let img = decoded.row(*r);
            geo.decode_position(img) == base.y()[*i] && background_bits(&geo, img, halves) == meta.rows[*j]
        })
        .count();
    let swap_accuracy = hits as f64 / pairs.len() as f64;

    let k = cfg.retrieval_k.min(n - 1);
    let mut share = 0.0;
    for q in 0..n {
        let nn = retrieve(&z_base, q, k)?;
        share += nn.iter().filter(|&&i| base_lat[i] == base_lat[q]).count() as f64 / k as f64;
    }
    Ok(SynthEvaluation {
        reports,
        z_pca_ratios,
        separating_components: separating,
        swap_accuracy,
        retrieval_background: share / n as f64,
        histograms,
    })
}

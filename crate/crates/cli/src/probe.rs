use std::fs;
use std::path::PathBuf;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Value};

use disentangle::autodiff::Tensor;
use disentangle::datagen::{latent_ids, SampleSet};
use disentangle::experiments::{capm_targets, measure_groups, InputScaler, PanelSplit};
use disentangle::probes::{
    classification_score, interpolate, linear_probe, market_correlation, pca_fit, retrieve,
    separating_components, swap_grid, write_histograms_csv, z_histograms, CodeSpace, LinearProbeConfig,
    ProbeConfig,
};
use disentangle::two_step::encode;

use crate::artifacts::{create_dir, load_panel, load_run, load_samples, write_echo, write_json, TrainedRun, METRICS};
use crate::config::{Experiment, RunConfig};
use crate::error::CliError;
use crate::ProbeArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    Pca,
    Logreg,
    Score,
    Hist,
    Swap,
    Interp,
    Retrieve,
    MarketCorr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Space {
    #[value(name = "S", alias = "s")]
    S,
    #[value(name = "Z", alias = "z")]
    Z,
    #[value(name = "X", alias = "x")]
    X,
}

impl From<Space> for CodeSpace {
    fn from(s: Space) -> Self {
        match s {
            Space::S => CodeSpace::S,
            Space::Z => CodeSpace::Z,
            Space::X => CodeSpace::X,
        }
    }
}

struct Target {
    name: &'static str,
    labels: Vec<usize>,
    classes: usize,
}

/// Model inputs of the probed samples with their labelled factors.
struct ProbeData {
    x: Tensor,
    targets: Vec<Target>,
    /// Period of every row and the mean market return of each period.
    market: Option<(Vec<usize>, Vec<f64>)>,
}

impl ProbeData {
    fn target(&self, name: &str) -> Result<&Target, CliError> {
        self.targets.iter().find(|t| t.name == name).ok_or_else(|| {
            let names: Vec<&str> = self.targets.iter().map(|t| t.name).collect();
            CliError::usage(format!("unknown target `{name}` (expected one of: {})", names.join(", ")))
        })
    }

    fn codes(&self, run: &TrainedRun, space: CodeSpace) -> Result<Tensor, CliError> {
        Ok(match space {
            CodeSpace::X => self.x.clone(),
            CodeSpace::S => encode(&run.bundle.enc_s, &self.x)?,
            CodeSpace::Z => encode(&run.bundle.enc_z, &self.x)?,
        })
    }
}

fn scaled(scaler: Option<&InputScaler>, x: &Tensor) -> Result<Tensor, CliError> {
    Ok(match scaler {
        Some(s) => s.apply(x)?,
        None => x.clone(),
    })
}

fn synth_data(set: &SampleSet, classes: usize) -> Result<ProbeData, CliError> {
    Ok(ProbeData {
        x: set.x().clone(),
        targets: vec![
            Target {
                name: "label",
                labels: set.y().to_vec(),
                classes: set.n_classes(),
            },
            Target {
                name: "background",
                labels: latent_ids(set)?,
                classes,
            },
        ],
        market: None,
    })
}

/// Rebuilds the probed samples from the run's configuration. Synthetic
/// probes see the unique images, or `probe_samples` draws of them for the
/// neural score; panel probes see the test span.
fn probe_data(run: &TrainedRun, kind: ProbeKind, seed: u64) -> Result<ProbeData, CliError> {
    let mut cfg = run.config.clone();
    match cfg.experiment {
        Experiment::Synth1 | Experiment::Synth2 => {
            let base = load_samples(&mut cfg)?;
            let set = if kind == ProbeKind::Score {
                base.resample(cfg.synth.probe_samples, seed.wrapping_add(2))?
            } else {
                base
            };
            synth_data(&set, cfg.synth.kind.latent_classes())
        }
        Experiment::Capm => {
            let samples = load_samples(&mut cfg)?;
            let t = capm_targets(&samples, &cfg.capm)?;
            Ok(ProbeData {
                x: scaled(run.scaler.as_ref(), samples.x())?,
                targets: vec![
                    Target {
                        name: "label",
                        labels: samples.y().to_vec(),
                        classes: samples.n_classes(),
                    },
                    Target {
                        name: "beta",
                        labels: t.beta,
                        classes: cfg.capm.beta_groups,
                    },
                    Target {
                        name: "e_rm",
                        labels: t.e_rm,
                        classes: cfg.capm.market_groups,
                    },
                ],
                market: Some((t.periods, t.market_mean)),
            })
        }
        Experiment::Panel => {
            let panel = load_panel(&cfg)?;
            let p = &cfg.panel;
            let train = PanelSplit::build(&panel, &p.train_span, p.measure_window)?;
            let test = PanelSplit::build(&panel, &p.test_span, p.measure_window)?;
            let raw = test.kept_rows(test.samples.x());
            let quarters: Vec<usize> = test.measures.kept.iter().map(|&i| test.samples.y()[i]).collect();
            let n_q = test.samples.n_classes();
            let days = raw.cols() / 2;
            let mut market = vec![0.0; n_q];
            for (r, &q) in quarters.iter().enumerate() {
                market[q] = raw.row(r)[days..].iter().sum::<f64>() / days as f64;
            }
            let mut targets = vec![Target {
                name: "label",
                labels: quarters.clone(),
                classes: n_q,
            }];
            for (name, labels) in measure_groups(&train, &test, p.measure_classes)? {
                targets.push(Target {
                    name,
                    labels,
                    classes: p.measure_classes,
                });
            }
            Ok(ProbeData {
                x: scaled(run.scaler.as_ref(), &raw)?,
                targets,
                market: Some((quarters, market)),
            })
        }
    }
}

fn write_rows(path: &PathBuf, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn image_header(lead: &[&str], width: usize) -> Vec<String> {
    lead.iter()
        .map(|s| s.to_string())
        .chain((0..width).map(|j| format!("x_{j}")))
        .collect()
}

fn check_row(n: usize, i: usize, flag: &str) -> Result<(), CliError> {
    if i >= n {
        return Err(CliError::usage(format!("--{flag} {i} out of range for {n} samples")));
    }
    Ok(())
}

#[derive(Serialize)]
struct ProbeEcho<'a> {
    probe: ProbeKind,
    run: &'a PathBuf,
    space: CodeSpace,
    target: &'a str,
    k: Option<usize>,
    query: usize,
    other: usize,
    seed: u64,
}

pub fn probe(args: ProbeArgs) -> Result<(), CliError> {
    let run = load_run(&args.run)?;
    let seed = args.seed.unwrap_or(run.config.seed);
    let space = CodeSpace::from(args.space);
    let out = args.out.clone().unwrap_or_else(|| args.run.join("probes"));
    let data = probe_data(&run, args.probe, seed)?;
    let n = data.x.rows();
    let dims = run.bundle.dims;

    let result: Value = match args.probe {
        ProbeKind::Pca => {
            let codes = data.codes(&run, space)?;
            let k = args.k.unwrap_or(codes.cols());
            let model = pca_fit(&codes, k)?;
            println!("{space} PCA ratios: {:?}", model.ratios);
            json!({ "k": k, "ratios": model.ratios })
        }
        ProbeKind::Logreg => {
            let t = data.target(&args.target)?;
            let codes = data.codes(&run, space)?;
            let cfg = LinearProbeConfig {
                pca_components: args.k,
                seed,
                ..LinearProbeConfig::default()
            };
            let report = linear_probe(&codes, &t.labels, t.classes, space, t.name, &cfg)?;
            println!("{} {space} -> {}: accuracy {:.4}", report.probe, t.name, report.accuracy);
            serde_json::to_value(report)?
        }
        ProbeKind::Score => {
            let t = data.target(&args.target)?;
            let codes = data.codes(&run, space)?;
            let base = match run.config.experiment {
                Experiment::Synth1 | Experiment::Synth2 => run.config.synth.probe,
                _ => ProbeConfig::default(),
            };
            let cfg = ProbeConfig { seed, ..base };
            let report = classification_score(&codes, &t.labels, t.classes, space, t.name, &cfg)?;
            println!("score {space} -> {}: accuracy {:.4} (chance {:.4})", t.name, report.accuracy, report.chance);
            serde_json::to_value(report)?
        }
        ProbeKind::Hist => {
            let t = data.target(&args.target)?;
            let codes = data.codes(&run, space)?;
            let bins = z_histograms(&codes, &t.labels, args.k.unwrap_or(20))?;
            create_dir(&out)?;
            let file = format!("hist_{space}_{}.csv", t.name);
            write_histograms_csv(&bins, &out.join(&file))?;
            let separating = separating_components(&codes, &t.labels)?;
            println!("{space} components separating {}: {separating:?}", t.name);
            json!({ "separating_components": separating, "file": file })
        }
        ProbeKind::Swap => {
            let k = args.k.unwrap_or(n.min(10));
            if k == 0 || k > n {
                return Err(CliError::usage(format!("--k must be in 1..={n} for swap")));
            }
            let idx: Vec<usize> = (0..k).collect();
            let x = data.x.select_rows(&idx);
            let s = encode(&run.bundle.enc_s, &x)?;
            let z = encode(&run.bundle.enc_z, &x)?;
            let grid = swap_grid(&run.bundle.decoder, &s, &z)?;
            create_dir(&out)?;
            write_rows(
                &out.join("swap.csv"),
                &image_header(&["s_source", "z_source"], grid.cols()),
                (0..grid.rows()).map(|r| {
                    let mut row = vec![(r / k).to_string(), (r % k).to_string()];
                    row.extend(grid.row(r).iter().map(f64::to_string));
                    row
                }),
            )?;
            println!("wrote {} swapped decodings", grid.rows());
            json!({ "k": k, "file": "swap.csv" })
        }
        ProbeKind::Interp => {
            check_row(n, args.query, "query")?;
            check_row(n, args.other, "other")?;
            let steps = args.k.unwrap_or(5);
            let x = data.x.select_rows(&[args.query, args.other]);
            let s = encode(&run.bundle.enc_s, &x)?;
            let z = encode(&run.bundle.enc_z, &x)?;
            let grid = interpolate(&run.bundle.decoder, (s.row(0), z.row(0)), (s.row(1), z.row(1)), steps)?;
            create_dir(&out)?;
            let alpha = |i: usize| i as f64 / (steps - 1) as f64;
            write_rows(
                &out.join("interp.csv"),
                &image_header(&["alpha_s", "alpha_z"], grid.cols()),
                (0..grid.rows()).map(|r| {
                    let mut row = vec![alpha(r / steps).to_string(), alpha(r % steps).to_string()];
                    row.extend(grid.row(r).iter().map(f64::to_string));
                    row
                }),
            )?;
            println!("wrote a {steps}x{steps} interpolation grid");
            json!({ "steps": steps, "query": args.query, "other": args.other, "file": "interp.csv" })
        }
        ProbeKind::Retrieve => {
            check_row(n, args.query, "query")?;
            let t = data.target(&args.target)?;
            let codes = data.codes(&run, space)?;
            let k = args.k.unwrap_or(5);
            let nn = retrieve(&codes, args.query, k)?;
            let want = t.labels[args.query];
            let same = nn.iter().filter(|&&i| t.labels[i] == want).count() as f64 / k as f64;
            println!("{space} neighbours of {}: {nn:?}; share with the same {}: {same:.3}", args.query, t.name);
            json!({
                "query": args.query,
                "neighbours": nn,
                "neighbour_targets": nn.iter().map(|&i| t.labels[i]).collect::<Vec<_>>(),
                "same_target_share": same,
            })
        }
        ProbeKind::MarketCorr => {
            let (periods, market) = data
                .market
                .as_ref()
                .ok_or_else(|| CliError::usage("market-corr needs a capm or panel run"))?;
            let s = data.codes(&run, CodeSpace::S)?;
            let r = market_correlation(&s, periods, market)?;
            println!("|corr(S_1, market)| = {r:.4}");
            json!({ "correlation": r })
        }
    };

    let mut entry = json!({
        "probe": args.probe,
        "space": space,
        "target": args.target,
        "k": args.k,
        "seed": seed,
        "s_dim": dims.s,
        "z_dim": dims.z,
    });
    if let (Value::Object(e), Value::Object(r)) = (&mut entry, result) {
        e.extend(r);
    }
    create_dir(&out)?;
    let path = out.join(METRICS);
    let mut entries: Vec<Value> = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(_) => Vec::new(),
    };
    let key = |v: &Value| {
        ["probe", "space", "target", "k", "query", "other"]
            .map(|f| v.get(f).cloned().unwrap_or(Value::Null))
    };
    entries.retain(|e| key(e) != key(&entry));
    entries.push(entry);
    write_json(&path, &entries)?;
    let echo = ProbeEcho {
        probe: args.probe,
        run: &args.run,
        space,
        target: &args.target,
        k: args.k,
        query: args.query,
        other: args.other,
        seed,
    };
    write_echo(&out, "probe", echo, &RunConfig { out: out.clone(), ..run.config.clone() })
}

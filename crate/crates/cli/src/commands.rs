use serde::Serialize;

use disentangle::audit::{gradient_audit, AuditConfig};
use disentangle::datagen::gen_capm;
use disentangle::experiments::{
    backtest_test_span, panel_vol_forecaster, synth_dataset, train_capm_on, train_panel, train_synth,
    PanelRun, PanelSplit, VolSource,
};
use disentangle::nets::save_checkpoint;
use disentangle::two_step::{s_accuracy, Phase, TrainHistory};

use crate::artifacts::{
    create_dir, load_panel, load_run, load_samples, write_echo, write_json, CHECKPOINT, METRICS, SCALER,
};
use crate::config::{Experiment, RunConfig};
use crate::error::CliError;
use crate::{BacktestArgs, GenArgs, GradcheckArgs, TrainArgs};

#[derive(Serialize)]
struct GenEcho {
    experiment: Experiment,
}

pub fn gen(args: GenArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::resolve(&args.common, Some(args.experiment))?;
    match args.experiment {
        Experiment::Capm => {
            if let Some(p) = args.periods {
                cfg.capm.data.n_periods = p;
            }
            if let Some(a) = args.assets {
                cfg.capm.data.n_assets = a;
            }
        }
        Experiment::Panel => {
            if args.periods.is_some() {
                return Err(CliError::usage("--periods applies to capm only"));
            }
            if let Some(a) = args.assets {
                cfg.panel.sim.n_assets = a;
            }
        }
        _ => {
            if args.periods.is_some() || args.assets.is_some() {
                return Err(CliError::usage("--periods and --assets apply to capm and panel only"));
            }
        }
    }
    let out = cfg.out.clone();
    create_dir(&out)?;
    match args.experiment {
        Experiment::Synth1 | Experiment::Synth2 => {
            let set = synth_dataset(cfg.synth.kind, cfg.synth.side, cfg.seed)?;
            set.write_csv(&out.join("dataset.csv"))?;
            set.write_meta_csv(&out.join("meta.csv"))?;
            println!("wrote {} images to {}", set.len(), out.display());
        }
        Experiment::Capm => {
            let (_, set) = gen_capm(&cfg.capm.data, cfg.seed)?;
            set.write_csv(&out.join("dataset.csv"))?;
            set.write_meta_csv(&out.join("meta.csv"))?;
            println!("wrote {} samples to {}", set.len(), out.display());
        }
        Experiment::Panel => {
            let panel = load_panel(&RunConfig { data: None, ..cfg.clone() })?;
            panel.write_csv(&out.join("returns.csv"), &out.join("market.csv"))?;
            println!(
                "wrote {} days x {} assets to {}",
                panel.n_days(),
                panel.tickers.len(),
                out.display()
            );
        }
    }
    write_echo(&out, "gen", GenEcho { experiment: args.experiment }, &RunConfig { data: None, ..cfg })
}

#[derive(Serialize)]
struct PhaseCounts {
    stage1_epochs: usize,
    encdec_steps: usize,
    adversary_steps: usize,
}

#[derive(Serialize)]
struct TrainMetrics {
    experiment: Experiment,
    seed: u64,
    lambda: f64,
    ablation: bool,
    /// Rows the model was trained on.
    samples: usize,
    /// Eval-mode accuracy of Enc_S and its classifier on the training set.
    stage1_accuracy: f64,
    stage1_loss: f64,
    final_l_rec: Option<f64>,
    final_l_adv: Option<f64>,
    adversary_accuracy: Option<f64>,
    counts: PhaseCounts,
}

impl TrainMetrics {
    fn new(cfg: &RunConfig, samples: usize, stage1: (f64, f64), history: &TrainHistory) -> Self {
        let encdec = history.last(Phase::EncDec);
        let adv = history.last(Phase::Adversary);
        Self {
            experiment: cfg.experiment,
            seed: cfg.seed,
            lambda: cfg.train().lambda,
            ablation: cfg.train().is_ablation(),
            samples,
            stage1_accuracy: stage1.0,
            stage1_loss: stage1.1,
            final_l_rec: encdec.and_then(|r| r.l_rec),
            final_l_adv: encdec.and_then(|r| r.l_adv),
            adversary_accuracy: adv.and_then(|r| r.adv_acc),
            counts: PhaseCounts {
                stage1_epochs: history.count(Phase::Stage1),
                encdec_steps: history.count(Phase::EncDec),
                adversary_steps: history.count(Phase::Adversary),
            },
        }
    }
}

#[derive(Serialize)]
struct TrainEcho {
    experiment: Experiment,
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::resolve(&args.common, args.experiment)?;
    if let Some(d) = args.data {
        cfg.data = Some(d);
    }
    let (bundle, history, scaler, stage1, n) = match cfg.experiment {
        Experiment::Synth1 | Experiment::Synth2 => {
            let base = load_samples(&mut cfg)?;
            let (bundle, history) = train_synth(&cfg.synth, &base, cfg.seed)?;
            let s = s_accuracy(&bundle, &base)?;
            (bundle, history, None, (s.acc, s.loss), cfg.synth.train_samples)
        }
        Experiment::Capm => {
            let samples = load_samples(&mut cfg)?;
            let run = train_capm_on(&cfg.capm, samples, cfg.seed)?;
            let x = match &run.scaler {
                Some(sc) => sc.apply_set(&run.samples)?,
                None => run.samples.clone(),
            };
            let s = s_accuracy(&run.bundle, &x)?;
            (run.bundle, run.history, run.scaler, (s.acc, s.loss), x.len())
        }
        Experiment::Panel => {
            let panel = load_panel(&cfg)?;
            let run = train_panel(&cfg.panel, &panel, cfg.seed)?;
            let x = match &run.scaler {
                Some(sc) => sc.apply_set(&run.train.samples)?,
                None => run.train.samples.clone(),
            };
            let s = s_accuracy(&run.bundle, &x)?;
            (run.bundle, run.history, run.scaler, (s.acc, s.loss), x.len())
        }
    };
    let out = cfg.out.clone();
    create_dir(&out)?;
    save_checkpoint(&bundle, &out.join(CHECKPOINT))?;
    history.write_csv(&out.join("history.csv"))?;
    if let Some(sc) = &scaler {
        write_json(&out.join(SCALER), sc)?;
    }
    let metrics = TrainMetrics::new(&cfg, n, stage1, &history);
    write_json(&out.join(METRICS), &metrics)?;
    write_echo(&out, "train", TrainEcho { experiment: cfg.experiment }, &cfg)?;
    println!(
        "{}: stage-1 accuracy {:.4}, final L_rec {}, adversary accuracy {}",
        cfg.experiment,
        metrics.stage1_accuracy,
        metrics.final_l_rec.map_or("-".into(), |v| format!("{v:.5}")),
        metrics.adversary_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
    );
    Ok(())
}

#[derive(Serialize)]
struct BacktestEcho {
    classifier: VolSource,
    run: Option<std::path::PathBuf>,
}

#[derive(Serialize)]
struct BacktestMetrics {
    classifier: VolSource,
    seed: u64,
    summary: disentangle::options::BacktestSummary,
    /// Largest long and short leg over traded days.
    max_long: usize,
    max_short: usize,
    /// Traded days whose legs were not both `per_side` wide.
    unbalanced_days: usize,
}

pub fn backtest(args: BacktestArgs) -> Result<(), CliError> {
    let source = VolSource::from(args.classifier);
    if source.needs_model() && args.run.is_none() {
        return Err(CliError::usage("--classifier z needs --run <trained panel run>"));
    }
    let trained = args.run.as_deref().map(load_run).transpose()?;
    let mut cfg = match &trained {
        Some(t) => {
            if t.config.experiment != Experiment::Panel {
                return Err(CliError::usage(format!(
                    "--run must be a panel run, got {}",
                    t.config.experiment
                )));
            }
            let mut c = t.config.clone();
            c.out = args.run.as_ref().expect("run given").join("backtest");
            c.apply(&crate::config::Overrides {
                config: None,
                lambda: None,
                preset: None,
                ..args.common.clone()
            });
            c
        }
        None => RunConfig::resolve(&args.common, Some(Experiment::Panel))?,
    };
    if let Some(d) = args.data {
        cfg.data = Some(d);
    }
    let panel = load_panel(&cfg)?;
    let run = match trained {
        Some(t) => {
            let p = &cfg.panel;
            Some(PanelRun {
                train: PanelSplit::build(&panel, &p.train_span, p.measure_window)?,
                test: PanelSplit::build(&panel, &p.test_span, p.measure_window)?,
                scaler: t.scaler,
                bundle: t.bundle,
                history: TrainHistory::default(),
            })
        }
        None => None,
    };
    let mut forecaster = panel_vol_forecaster(source, &panel, run.as_ref(), &cfg.panel, cfg.seed)?;
    let report = backtest_test_span(&panel, forecaster.as_mut(), &cfg.panel)?;

    let out = cfg.out.clone();
    create_dir(&out)?;
    report.write_csv(&out.join("backtest.csv"))?;
    let traded: Vec<_> = report.days.iter().filter(|d| d.pnl.is_some()).collect();
    let per_side = cfg.panel.backtest.per_side;
    let metrics = BacktestMetrics {
        classifier: source,
        seed: cfg.seed,
        summary: report.summary,
        max_long: traded.iter().map(|d| d.n_long).max().unwrap_or(0),
        max_short: traded.iter().map(|d| d.n_short).max().unwrap_or(0),
        unbalanced_days: traded
            .iter()
            .filter(|d| d.n_long != per_side || d.n_short != per_side)
            .count(),
    };
    write_json(&out.join(METRICS), &metrics)?;
    write_echo(
        &out,
        "backtest",
        BacktestEcho {
            classifier: source,
            run: args.run.clone(),
        },
        &cfg,
    )?;
    let s = &report.summary;
    println!(
        "{source}: mean {:.6}, sd {:.6}, positive {:.2}% over {} traded days ({} skipped)",
        s.mean, s.sd, s.pct_positive, s.traded_days, s.skipped_days
    );
    if s.traded_days == 0 {
        return Err(CliError::Failed(
            "no tradable day: the panel is shorter than the warm-up window".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct GradcheckEcho {
    points: u64,
    h: f64,
    tol_batchnorm: f64,
    tol_other: f64,
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&args.common, None)?;
    let audit = AuditConfig {
        points: args.points,
        seed: cfg.seed,
        ..AuditConfig::default()
    };
    if audit.points == 0 {
        return Err(CliError::usage("--points must be positive"));
    }
    let results = gradient_audit(&audit)?;
    let out = cfg.out.clone();
    create_dir(&out)?;
    write_json(&out.join("gradcheck.json"), &results)?;
    write_echo(
        &out,
        "gradcheck",
        GradcheckEcho {
            points: audit.points,
            h: audit.h,
            tol_batchnorm: audit.tol_batchnorm,
            tol_other: audit.tol_other,
        },
        &cfg,
    )?;
    for r in &results {
        println!(
            "{:<24} max rel error {:.3e} (tol {:.0e}) {}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("gradient audit failed: {}", failed.join(", "))))
    }
}


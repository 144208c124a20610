use std::fmt;
use std::path::{Path, PathBuf};

use disentangle::experiments::{CapmExperiment, PanelExperiment, SynthExperiment, SynthKind};
use disentangle::two_step::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Synth1,
    Synth2,
    Capm,
    Panel,
}

impl Experiment {
    pub fn synth_kind(self) -> Option<SynthKind> {
        match self {
            Experiment::Synth1 => Some(SynthKind::Synth1),
            Experiment::Synth2 => Some(SynthKind::Synth2),
            _ => None,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::Synth1 => "synth1",
            Experiment::Synth2 => "synth2",
            Experiment::Capm => "capm",
            Experiment::Panel => "panel",
        })
    }
}

/// Every parameter of a run. Missing TOML keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out: PathBuf,
    /// Directory written by `gen`; generated in memory from `seed` when absent.
    pub data: Option<PathBuf>,
    pub synth: SynthExperiment,
    pub capm: CapmExperiment,
    pub panel: PanelExperiment,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Synth1,
            seed: 0,
            out: PathBuf::from("out"),
            data: None,
            synth: SynthExperiment::default(),
            capm: CapmExperiment::default(),
            panel: PanelExperiment::default(),
        }
    }
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Adversarial weight λ of the active experiment.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Architecture preset of the active experiment (`synth` or `stocks`).
    #[arg(long)]
    pub preset: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let invalid = |e: &dyn fmt::Display| CliError::Usage(format!("invalid config {}: {e}", path.display()));
        let user: toml::Table = toml::from_str(&text).map_err(|e| invalid(&e))?;
        let mut base = toml::Table::try_from(Self::default()).map_err(|e| invalid(&e))?;
        if let Some(name) = user.get("experiment").and_then(toml::Value::as_str) {
            // the synth section's own defaults follow the experiment kind
            if let Ok(kind) = name.parse::<SynthKind>() {
                let synth = toml::Table::try_from(SynthExperiment::new(kind)).map_err(|e| invalid(&e))?;
                base.insert("synth".into(), toml::Value::Table(synth));
            }
        }
        merge(&mut base, user);
        toml::Value::Table(base).try_into().map_err(|e| invalid(&e))
    }

    /// Config file (if any) with flag overrides applied.
    pub fn resolve(ov: &Overrides, experiment: Option<Experiment>) -> Result<Self, CliError> {
        let mut cfg = match &ov.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(e) = experiment {
            cfg.experiment = e;
        }
        cfg.apply(ov);
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(o) = &ov.out {
            self.out = o.clone();
        }
        if let Some(l) = ov.lambda {
            self.train_mut().lambda = l;
        }
        if let Some(p) = &ov.preset {
            *self.preset_mut() = p.clone();
        }
        if let Some(kind) = self.experiment.synth_kind() {
            self.synth.kind = kind;
        }
    }

    pub fn train(&self) -> &TrainConfig {
        match self.experiment {
            Experiment::Synth1 | Experiment::Synth2 => &self.synth.train,
            Experiment::Capm => &self.capm.train,
            Experiment::Panel => &self.panel.train,
        }
    }

    fn train_mut(&mut self) -> &mut TrainConfig {
        match self.experiment {
            Experiment::Synth1 | Experiment::Synth2 => &mut self.synth.train,
            Experiment::Capm => &mut self.capm.train,
            Experiment::Panel => &mut self.panel.train,
        }
    }

    fn preset_mut(&mut self) -> &mut String {
        match self.experiment {
            Experiment::Synth1 | Experiment::Synth2 => &mut self.synth.preset,
            Experiment::Capm => &mut self.capm.preset,
            Experiment::Panel => &mut self.panel.preset,
        }
    }
}

/// Overlays `user` onto `base`, table by table, so omitted keys keep the
/// defaults of their enclosing section. A table whose `kind` tag changes is
/// replaced whole.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u))
                if b.get("kind").is_none() || b.get("kind") == u.get("kind") || u.get("kind").is_none() =>
            {
                merge(b, u)
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use disentangle::nets::OptimizerConfig;

    fn load_str(text: &str) -> Result<RunConfig, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        RunConfig::load(&path)
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(load_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn nested_keys_keep_section_defaults() {
        let cfg = load_str("[synth.train]\nlambda = 2.0\n").unwrap();
        let expected = SynthExperiment::default().train;
        assert_eq!(cfg.synth.train.lambda, 2.0);
        assert_eq!(cfg.synth.train.stage2_iterations, expected.stage2_iterations);
        assert_eq!(cfg.synth.train.adversary_optimizer, expected.adversary_optimizer);
        assert_eq!(cfg.synth.probe, SynthExperiment::default().probe);
    }

    #[test]
    fn synth2_section_defaults_follow_the_experiment() {
        let cfg = load_str("experiment = \"synth2\"\n[synth]\nside = 40\n").unwrap();
        assert_eq!(cfg.synth.kind, SynthKind::Synth2);
        assert_eq!(cfg.synth.side, 40);
    }

    #[test]
    fn optimizer_kind_change_replaces_the_table() {
        let cfg = load_str("[capm.train.adversary_optimizer]\nkind = \"adam\"\nlr = 0.01\n").unwrap();
        assert_eq!(cfg.capm.train.adversary_optimizer, OptimizerConfig::adam(0.01));
        let cfg = load_str("[capm.train.adversary_optimizer]\nlr = 0.2\n").unwrap();
        assert_eq!(cfg.capm.train.adversary_optimizer, OptimizerConfig::sgd(0.2));
    }

    #[test]
    fn unknown_keys_and_bad_syntax_are_usage_errors() {
        for text in ["bogus = 1\n", "seed = \n"] {
            let err = load_str(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{err}");
        }
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 4\n[capm.train]\nlambda = 0.5\n").unwrap();
        let ov = Overrides {
            config: Some(path),
            lambda: Some(0.0),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(&ov, Some(Experiment::Capm)).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.capm.train.lambda, 0.0);
        assert!(cfg.train().is_ablation());
        assert_eq!(cfg.synth.train.lambda, 1.0);
    }
}

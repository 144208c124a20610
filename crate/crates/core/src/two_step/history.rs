use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// One epoch of S-encoder / S-classifier training.
    Stage1,
    /// One reconstruction-vs-adversary update of Enc_Z and the decoder.
    EncDec,
    /// One update of the adversarial classifier.
    Adversary,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Stage1 => "stage1",
            Phase::EncDec => "encdec",
            Phase::Adversary => "adversary",
        })
    }
}

/// One logged training step. Fields that do not apply to the phase are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub iter: usize,
    pub phase: Phase,
    pub l_rec: Option<f64>,
    /// Adversarial loss as seen by the side that took this step.
    pub l_adv: Option<f64>,
    pub adv_acc: Option<f64>,
    pub s_loss: Option<f64>,
    pub s_acc: Option<f64>,
    /// Seconds since the stage started; kept out of the CSV so histories of
    /// identical runs are byte-identical.
    #[serde(skip)]
    pub elapsed: f64,
}

impl Record {
    pub(crate) fn new(iter: usize, phase: Phase, elapsed: f64) -> Self {
        Self {
            iter,
            phase,
            l_rec: None,
            l_adv: None,
            adv_acc: None,
            s_loss: None,
            s_acc: None,
            elapsed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub records: Vec<Record>,
    /// Set when training stopped early; the last record is the failed step.
    pub aborted: Option<String>,
}

impl TrainHistory {
    pub fn count(&self, phase: Phase) -> usize {
        self.records.iter().filter(|r| r.phase == phase).count()
    }

    pub fn last(&self, phase: Phase) -> Option<&Record> {
        self.records.iter().rev().find(|r| r.phase == phase)
    }

    /// `iter,phase,l_rec,l_adv,adv_acc,s_loss,s_acc`; empty cells for
    /// fields that do not apply.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "iter,phase,l_rec,l_adv,adv_acc,s_loss,s_acc")?;
        let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.iter,
                r.phase,
                cell(r.l_rec),
                cell(r.l_adv),
                cell(r.adv_acc),
                cell(r.s_loss),
                cell(r.s_acc)
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::history::{Phase, Record, TrainHistory};
use crate::autodiff::{Graph, Mode, Tensor};
use crate::datagen::SampleSet;
use crate::error::{Error, Result};
use crate::nets::{network_hash, ModelBundle, Network, Optimizer, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the adversarial term in `L_rec − λ·L_adv`. Zero is an
    /// ablation (plain autoencoder for Z).
    pub lambda: f64,
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage2_iterations: usize,
    pub encdec_batches_per_iter: usize,
    pub adversary_batches_per_iter: usize,
    pub seed: u64,
    pub stage1_optimizer: OptimizerConfig,
    pub encdec_optimizer: OptimizerConfig,
    pub adversary_optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            batch_size: 128,
            stage1_epochs: 30,
            stage2_iterations: 3000,
            encdec_batches_per_iter: 1,
            adversary_batches_per_iter: 3,
            seed: 0,
            stage1_optimizer: OptimizerConfig::adam(1e-3),
            encdec_optimizer: OptimizerConfig::adam(1e-3),
            adversary_optimizer: OptimizerConfig::sgd(0.05),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2 (batch-norm statistics)"));
        }
        if self.encdec_batches_per_iter == 0 || self.adversary_batches_per_iter == 0 {
            return Err(Error::invalid("per-iteration batch counts must be positive"));
        }
        for opt in [
            self.stage1_optimizer,
            self.encdec_optimizer,
            self.adversary_optimizer,
        ] {
            if !(opt.lr() >= 0.0 && opt.lr().is_finite()) {
                return Err(Error::invalid("learning rates must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn is_ablation(&self) -> bool {
        self.lambda == 0.0
    }
}

/// Mini-batch indices drawn without replacement, reshuffled every epoch.
/// Trailing partial batches are dropped unless the whole set is smaller
/// than one batch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    batch: usize,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            batch: batch.min(n),
            pos: 0,
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().checked_div(self.batch).unwrap_or(0)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

/// Fraction of rows whose arg-max matches the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = (0..logits.rows())
        .filter(|&i| argmax(logits.row(i)) == labels[i])
        .count();
    hits as f64 / labels.len() as f64
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Eval-mode codes for a batch of inputs.
pub fn encode(enc: &Network, x: &Tensor) -> Result<Tensor> {
    enc.predict(x)
}

fn check_data(bundle: &ModelBundle, data: &SampleSet) -> Result<()> {
    if data.width() != bundle.dims.input {
        return Err(Error::shape(
            "training data",
            &[data.len(), data.width()],
            &[data.len(), bundle.dims.input],
        ));
    }
    if data.n_classes() != bundle.dims.classes {
        return Err(Error::invalid(format!(
            "data has {} classes but the model {}",
            data.n_classes(),
            bundle.dims.classes
        )));
    }
    if let Some(c) = data.class_counts().iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {c} has no training samples")));
    }
    Ok(())
}

fn abort(history: &mut TrainHistory, iteration: usize, reason: String) -> Error {
    history.aborted = Some(reason.clone());
    Error::TrainingAborted { iteration, reason }
}

/// Losses of one S-classifier step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierStep {
    pub loss: f64,
    pub acc: f64,
}

/// One joint Adam step of Enc_S and the S classifier on cross-entropy.
pub fn stage1_update(
    bundle: &mut ModelBundle,
    x: &Tensor,
    y: &[usize],
    opt_s: &mut Optimizer,
    opt_c: &mut Optimizer,
) -> Result<ClassifierStep> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let ts = bundle.enc_s.forward_on(&mut g, xv, Mode::Train, true)?;
    let tc = bundle.s_classifier.forward_on(&mut g, ts.output, Mode::Train, true)?;
    let loss = g.softmax_cross_entropy(tc.output, y)?;
    let l = g.value(loss).item();
    if !l.is_finite() {
        return Err(Error::NonFinite("S classifier loss".into()));
    }
    let acc = accuracy(g.value(tc.output), y);
    g.backward(loss)?;
    let gs = bundle.enc_s.collect_gradients(&g, &ts);
    let gc = bundle.s_classifier.collect_gradients(&g, &tc);
    bundle.enc_s.apply_gradients(opt_s, &gs)?;
    bundle.s_classifier.apply_gradients(opt_c, &gc)?;
    bundle.enc_s.update_running_stats(&ts.batch_stats, x.rows());
    bundle.s_classifier.update_running_stats(&tc.batch_stats, x.rows());
    Ok(ClassifierStep { loss: l, acc })
}

/// Eval-mode accuracy and mean loss of the S path over a whole set.
pub fn s_accuracy(bundle: &ModelBundle, data: &SampleSet) -> Result<ClassifierStep> {
    let s = encode(&bundle.enc_s, data.x())?;
    let logits = bundle.s_classifier.predict(&s)?;
    let mut g = Graph::new();
    let lv = g.constant(logits.clone());
    let loss = g.softmax_cross_entropy(lv, data.y())?;
    Ok(ClassifierStep {
        loss: g.value(loss).item(),
        acc: accuracy(&logits, data.y()),
    })
}

/// Stage 1: trains Enc_S with its classifier for `stage1_epochs` epochs,
/// appending one record per epoch (full-set eval accuracy) to `history`.
pub fn train_stage1(
    bundle: &mut ModelBundle,
    data: &SampleSet,
    cfg: &TrainConfig,
    history: &mut TrainHistory,
) -> Result<()> {
    cfg.validate()?;
    check_data(bundle, data)?;
    let mut opt_s = Optimizer::new(cfg.stage1_optimizer);
    let mut opt_c = Optimizer::new(cfg.stage1_optimizer);
    let mut sampler = BatchSampler::new(data.len(), cfg.batch_size, cfg.seed ^ 0x51);
    let start = Instant::now();
    for epoch in 0..cfg.stage1_epochs {
        for _ in 0..sampler.batches_per_epoch().max(1) {
            let idx = sampler.next_batch();
            let batch = data.select(&idx);
            if let Err(e) = stage1_update(bundle, batch.x(), batch.y(), &mut opt_s, &mut opt_c) {
                let mut rec = Record::new(epoch, Phase::Stage1, start.elapsed().as_secs_f64());
                rec.s_loss = Some(f64::NAN);
                history.records.push(rec);
                return Err(abort(history, epoch, e.to_string()));
            }
        }
        let eval = s_accuracy(bundle, data)?;
        let mut rec = Record::new(epoch, Phase::Stage1, start.elapsed().as_secs_f64());
        rec.s_loss = Some(eval.loss);
        rec.s_acc = Some(eval.acc);
        history.records.push(rec);
    }
    Ok(())
}

/// Losses of one enc-dec step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncDecStep {
    pub l_rec: f64,
    pub l_adv: f64,
}

/// One Adam step of Enc_Z and the decoder on `L_rec − λ·L_adv`.
///
/// S comes from the frozen Enc_S (eval mode, constant parameters). The
/// adversary runs in train mode on the batch's Z with constant parameters,
/// so the adversarial gradient reaches θ_Z only through Z and no adversary
/// state changes. With `λ = 0` the adversarial term is left out of the
/// objective (its value is still reported).
pub fn encdec_update(
    bundle: &mut ModelBundle,
    x: &Tensor,
    y: &[usize],
    lambda: f64,
    opt_z: &mut Optimizer,
    opt_dec: &mut Optimizer,
) -> Result<EncDecStep> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let s = bundle.enc_s.forward_on(&mut g, xv, Mode::Eval, false)?;
    let tz = bundle.enc_z.forward_on(&mut g, xv, Mode::Train, true)?;
    let sz = g.concat(s.output, tz.output)?;
    let td = bundle.decoder.forward_on(&mut g, sz, Mode::Train, true)?;
    let l_rec = g.mse(td.output, xv)?;
    let adv = bundle.adversary.forward_on(&mut g, tz.output, Mode::Train, false)?;
    let l_adv = g.softmax_cross_entropy(adv.output, y)?;
    let objective = if lambda == 0.0 {
        l_rec
    } else {
        let neg = g.scale(l_adv, -lambda)?;
        g.add(l_rec, neg)?
    };
    let step = EncDecStep {
        l_rec: g.value(l_rec).item(),
        l_adv: g.value(l_adv).item(),
    };
    if !g.value(objective).item().is_finite() {
        return Err(Error::NonFinite("enc-dec objective".into()));
    }
    g.backward(objective)?;
    let gz = bundle.enc_z.collect_gradients(&g, &tz);
    let gd = bundle.decoder.collect_gradients(&g, &td);
    bundle.enc_z.apply_gradients(opt_z, &gz)?;
    bundle.decoder.apply_gradients(opt_dec, &gd)?;
    bundle.enc_z.update_running_stats(&tz.batch_stats, x.rows());
    bundle.decoder.update_running_stats(&td.batch_stats, x.rows());
    Ok(step)
}

/// One step of the adversary on detached, eval-mode Z. Returns the loss
/// and the batch accuracy before the step.
pub fn adversary_update(
    bundle: &mut ModelBundle,
    x: &Tensor,
    y: &[usize],
    opt_a: &mut Optimizer,
) -> Result<ClassifierStep> {
    let z = encode(&bundle.enc_z, x)?;
    let mut g = Graph::new();
    let zv = g.constant(z);
    let ta = bundle.adversary.forward_on(&mut g, zv, Mode::Train, true)?;
    let loss = g.softmax_cross_entropy(ta.output, y)?;
    let l = g.value(loss).item();
    if !l.is_finite() {
        return Err(Error::NonFinite("adversary loss".into()));
    }
    let acc = accuracy(g.value(ta.output), y);
    g.backward(loss)?;
    let ga = bundle.adversary.collect_gradients(&g, &ta);
    bundle.adversary.apply_gradients(opt_a, &ga)?;
    bundle.adversary.update_running_stats(&ta.batch_stats, x.rows());
    Ok(ClassifierStep { loss: l, acc })
}

/// Stage 2: with Enc_S frozen, alternates `encdec_batches_per_iter`
/// enc-dec updates and `adversary_batches_per_iter` adversary updates per
/// iteration, each on a fresh mini-batch. Every update is recorded.
///
/// The Enc_S hash is checked after every iteration; any change aborts.
pub fn train_stage2(
    bundle: &mut ModelBundle,
    data: &SampleSet,
    cfg: &TrainConfig,
    history: &mut TrainHistory,
) -> Result<()> {
    cfg.validate()?;
    check_data(bundle, data)?;
    let frozen = network_hash(&bundle.enc_s);
    let mut opt_z = Optimizer::new(cfg.encdec_optimizer);
    let mut opt_dec = Optimizer::new(cfg.encdec_optimizer);
    let mut opt_a = Optimizer::new(cfg.adversary_optimizer);
    let mut sampler = BatchSampler::new(data.len(), cfg.batch_size, cfg.seed ^ 0x52);
    let start = Instant::now();
    for it in 0..cfg.stage2_iterations {
        for _ in 0..cfg.encdec_batches_per_iter {
            let batch = data.select(&sampler.next_batch());
            let mut rec = Record::new(it, Phase::EncDec, start.elapsed().as_secs_f64());
            match encdec_update(bundle, batch.x(), batch.y(), cfg.lambda, &mut opt_z, &mut opt_dec) {
                Ok(step) => {
                    rec.l_rec = Some(step.l_rec);
                    rec.l_adv = Some(step.l_adv);
                    history.records.push(rec);
                }
                Err(e) => {
                    history.records.push(rec);
                    return Err(abort(history, it, e.to_string()));
                }
            }
        }
        for _ in 0..cfg.adversary_batches_per_iter {
            let batch = data.select(&sampler.next_batch());
            let mut rec = Record::new(it, Phase::Adversary, start.elapsed().as_secs_f64());
            match adversary_update(bundle, batch.x(), batch.y(), &mut opt_a) {
                Ok(step) => {
                    rec.l_adv = Some(step.loss);
                    rec.adv_acc = Some(step.acc);
                    history.records.push(rec);
                }
                Err(e) => {
                    history.records.push(rec);
                    return Err(abort(history, it, e.to_string()));
                }
            }
        }
        if network_hash(&bundle.enc_s) != frozen {
            return Err(abort(history, it, "Enc_S parameters changed during stage 2".into()));
        }
    }
    Ok(())
}

/// Stage 1 followed by stage 2.
pub fn train(bundle: &mut ModelBundle, data: &SampleSet, cfg: &TrainConfig) -> Result<TrainHistory> {
    let mut history = TrainHistory::default();
    train_stage1(bundle, data, cfg, &mut history)?;
    train_stage2(bundle, data, cfg, &mut history)?;
    Ok(history)
}

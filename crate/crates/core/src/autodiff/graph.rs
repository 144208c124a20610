//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and whatever the backward
//! rule needs. `backward` walks the tape once, in reverse insertion order,
//! which is a valid reverse topological order because inputs always precede
//! their consumers.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Normalisation statistics used by a batch-norm node.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    SoftmaxCe {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    Mse(Var, Var),
    Concat(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Record of executed differentiable operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op.into()))
    }
}

/// `c (+)= op(a) · op(b)` on row-major buffers, where `op` optionally transposes.
/// `m × k` times `k × n`, dimensions given after transposition.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    // Stored layout: a is m×k (or k×m if transposed), b is k×n (or n×k).
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: buffer lengths checked above; strides describe in-bounds layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Adds an input tensor. It receives a gradient iff `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let tracked = t.requires_grad();
        self.push(t, Op::Leaf, tracked)
    }

    /// Adds a tensor that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Softmax probabilities saved by a cross-entropy node.
    pub fn saved_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::SoftmaxCe { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Smallest `|input|` seen by any ReLU node, i.e. the distance to the
    /// nearest kink. `None` if the graph has no ReLU.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => self
                    .value(x)
                    .data()
                    .iter()
                    .map(|v| v.abs())
                    .reduce(f64::min),
                _ => None,
            })
            .reduce(f64::min)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::shape(op, s, &[0, 0]));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        check_finite("matmul", &out)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::raw(vec![m, n], out), Op::MatMul(a, b), tracked))
    }

    /// `x[batch×n] + bias[n]`, bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, n) = self.matrix_dims("add_bias", x)?;
        if self.value(bias).numel() != n {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(n) {
            for (o, bj) in row.iter_mut().zip(b) {
                *o += bj;
            }
        }
        check_finite("add_bias", &out)?;
        let tracked = self.tracked(x) || self.tracked(bias);
        Ok(self.push(
            Tensor::raw(vec![rows, n], out),
            Op::AddBias(x, bias),
            tracked,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        check_finite("add", &out)?;
        let tracked = self.tracked(a) || self.tracked(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::raw(shape, out), Op::Add(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * factor).collect();
        check_finite("scale", &out)?;
        let tracked = self.tracked(a);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::raw(shape, out), Op::Scale(a, factor), tracked))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        let tracked = self.tracked(x);
        let shape = self.shape(x).to_vec();
        self.push(Tensor::raw(shape, out), Op::Relu(x), tracked)
    }

    /// Batch normalisation over the rows of `x`.
    ///
    /// Train mode normalises with the biased batch statistics and returns them
    /// so the caller can fold them into its running averages. Eval mode uses
    /// `running` and returns `None`.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &BatchStats,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (rows, n) = self.matrix_dims("batchnorm", x)?;
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(Error::shape("batchnorm", self.shape(x), self.shape(gamma)));
        }
        if running.mean.len() != n || running.var.len() != n {
            return Err(Error::shape("batchnorm", &[n], &[running.mean.len()]));
        }
        let xs = self.value(x).data();
        let (stats, inv_std) = match mode {
            Mode::Train => {
                if rows < 2 {
                    return Err(Error::invalid(
                        "batch-norm in train mode needs a batch of at least 2",
                    ));
                }
                let mut mean = vec![0.0; n];
                for row in xs.chunks_exact(n) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; n];
                for row in xs.chunks_exact(n) {
                    for j in 0..n {
                        let d = row[j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                (Some(BatchStats { mean, var }), inv)
            }
            Mode::Eval => {
                let inv = running
                    .var
                    .iter()
                    .map(|v| 1.0 / (v + BN_EPS).sqrt())
                    .collect();
                (None, inv)
            }
        };
        let mean = stats.as_ref().map_or(&running.mean, |s| &s.mean);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; rows * n];
        let mut out = vec![0.0; rows * n];
        for i in 0..rows {
            for j in 0..n {
                let h = (xs[i * n + j] - mean[j]) * inv_std[j];
                xhat[i * n + j] = h;
                out[i * n + j] = g[j] * h + b[j];
            }
        }
        check_finite("batchnorm", &out)?;
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        let var = self.push(
            Tensor::raw(vec![rows, n], out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
            tracked,
        );
        Ok((var, stats))
    }

    /// Mean categorical cross-entropy of `logits` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, k) = self.matrix_dims("softmax_cross_entropy", logits)?;
        if labels.len() != rows {
            return Err(Error::shape(
                "softmax_cross_entropy",
                self.shape(logits),
                &[labels.len()],
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; rows * k];
        let mut loss = 0.0;
        for i in 0..rows {
            let row = &z[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = (v - max).exp();
                denom += *p;
            }
            probs[i * k..(i + 1) * k]
                .iter_mut()
                .for_each(|p| *p /= denom);
            // -log softmax = log(denom) - (z_y - max)
            loss += denom.ln() - (row[labels[i]] - max);
        }
        loss /= rows as f64;
        check_finite("softmax_cross_entropy", &[loss])?;
        let tracked = self.tracked(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            tracked,
        ))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape("mse", self.shape(pred), self.shape(target)));
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let n = p.len().max(1) as f64;
        let loss = p
            .iter()
            .zip(t)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        check_finite("mse", &[loss])?;
        let tracked = self.tracked(pred) || self.tracked(target);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, target), tracked))
    }

    /// Column concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, p) = self.matrix_dims("concat", a)?;
        let (rb, q) = self.matrix_dims("concat", b)?;
        if ra != rb {
            return Err(Error::shape("concat", self.shape(a), self.shape(b)));
        }
        let da = self.value(a).data();
        let db = self.value(b).data();
        let mut out = Vec::with_capacity(ra * (p + q));
        for i in 0..ra {
            out.extend_from_slice(&da[i * p..(i + 1) * p]);
            out.extend_from_slice(&db[i * q..(i + 1) * q]);
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            Tensor::raw(vec![ra, p + q], out),
            Op::Concat(a, b),
            tracked,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        check_finite("sum", &[s])?;
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), tracked))
    }

    /// Propagates d`loss`/d· to every tracked node reachable from `loss`.
    ///
    /// Gradients are stored on the node tensors and read back with
    /// [`Graph::grad`]. A graph supports a single backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].tracked {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            self.nodes[idx].value.set_grad(g);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut accumulate = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                slot => *slot = Some(delta),
            }
        };
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.tracked(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, self.value(b).data(), true, &mut da, false);
                    accumulate(a, da);
                }
                if self.tracked(b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(a).data(), true, g, false, &mut db, false);
                    accumulate(b, db);
                }
            }
            &Op::AddBias(x, bias) => {
                let n = self.value(bias).numel();
                if self.tracked(bias) {
                    let mut db = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    accumulate(bias, db);
                }
                accumulate(x, g.to_vec());
            }
            &Op::Add(a, b) => {
                accumulate(a, g.to_vec());
                accumulate(b, g.to_vec());
            }
            &Op::Scale(a, f) => accumulate(a, g.iter().map(|v| v * f).collect()),
            &Op::Relu(x) => {
                let d = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                accumulate(x, d);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let n = inv_std.len();
                let rows = g.len() / n.max(1);
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for i in 0..rows {
                    for j in 0..n {
                        dgamma[j] += g[i * n + j] * xhat[i * n + j];
                        dbeta[j] += g[i * n + j];
                    }
                }
                if self.tracked(*x) {
                    let gam = self.value(*gamma).data();
                    let mut dx = vec![0.0; rows * n];
                    if *batch_stats {
                        let r = rows as f64;
                        for i in 0..rows {
                            for j in 0..n {
                                let k = i * n + j;
                                dx[k] = gam[j] * inv_std[j] / r
                                    * (r * g[k] - dbeta[j] - xhat[k] * dgamma[j]);
                            }
                        }
                    } else {
                        for i in 0..rows {
                            for j in 0..n {
                                dx[i * n + j] = g[i * n + j] * gam[j] * inv_std[j];
                            }
                        }
                    }
                    accumulate(*x, dx);
                }
                accumulate(*gamma, dgamma);
                accumulate(*beta, dbeta);
            }
            Op::SoftmaxCe {
                logits,
                probs,
                labels,
            } => {
                let rows = labels.len();
                let k = probs.len() / rows.max(1);
                let scale = g[0] / rows as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= scale;
                }
                accumulate(*logits, d);
            }
            &Op::Mse(p, t) => {
                let pv = self.value(p).data();
                let tv = self.value(t).data();
                let c = 2.0 * g[0] / pv.len().max(1) as f64;
                let dp: Vec<f64> = pv.iter().zip(tv).map(|(a, b)| c * (a - b)).collect();
                if self.tracked(t) {
                    accumulate(t, dp.iter().map(|v| -v).collect());
                }
                accumulate(p, dp);
            }
            &Op::Concat(a, b) => {
                let p = self.shape(a)[1];
                let q = self.shape(b)[1];
                let rows = self.shape(a)[0];
                let mut da = Vec::with_capacity(rows * p);
                let mut db = Vec::with_capacity(rows * q);
                for row in g.chunks_exact((p + q).max(1)).take(rows) {
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                accumulate(a, da);
                accumulate(b, db);
            }
            &Op::Sum(x) => accumulate(x, vec![g[0]; self.value(x).numel()]),
        }
    }
}

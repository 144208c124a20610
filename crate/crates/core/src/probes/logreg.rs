use serde::{Deserialize, Serialize};

use crate::autodiff::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    /// L2 penalty on the weights (not the intercepts).
    pub l2: f64,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

/// Multinomial logistic regression on standardised features.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogReg {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `(d + 1) × k` row-major; the last row holds the intercepts.
    pub weights: Vec<f64>,
    pub classes: usize,
    pub iterations: usize,
    pub grad_norm: f64,
}

struct Problem<'a> {
    x: &'a [f64],
    y: &'a [usize],
    n: usize,
    d: usize,
    k: usize,
    l2: f64,
}

impl Problem<'_> {
    /// Objective and gradient at `w`.
    fn eval(&self, w: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let (n, d, k) = (self.n, self.d, self.k);
        let mut logits = vec![0.0; n * k];
        gemm(n, d, k, self.x, false, &w[..d * k], false, &mut logits, false);
        let bias = &w[d * k..];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &mut logits[i * k..(i + 1) * k];
            for (l, b) in row.iter_mut().zip(bias) {
                *l += b;
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|l| (l - max).exp()).sum();
            let lse = max + z.ln();
            loss += lse - row[self.y[i]];
            for l in row.iter_mut() {
                *l = (*l - lse).exp();
            }
            row[self.y[i]] -= 1.0;
        }
        let reg: f64 = w[..d * k].iter().map(|v| v * v).sum();
        let f = loss / n as f64 + 0.5 * self.l2 * reg;
        if let Some(g) = grad {
            // logits now hold P − Y
            gemm(d, n, k, self.x, true, &logits, false, &mut g[..d * k], false);
            for c in 0..k {
                g[d * k + c] = (0..n).map(|i| logits[i * k + c]).sum();
            }
            let inv = 1.0 / n as f64;
            for (gi, wi) in g[..d * k].iter_mut().zip(&w[..d * k]) {
                *gi = *gi * inv + self.l2 * wi;
            }
            for gi in &mut g[d * k..] {
                *gi *= inv;
            }
        }
        f
    }
}

fn standardize(x: &Tensor, mean: &[f64], scale: &[f64]) -> Vec<f64> {
    let d = mean.len();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.rows() {
        out.extend(x.row(i).iter().enumerate().map(|(j, v)| (v - mean[j]) / scale[j]));
    }
    debug_assert_eq!(out.len(), x.rows() * d);
    out
}

/// Fits by full-batch gradient descent with Barzilai-Borwein step proposals
/// and Armijo backtracking.
pub fn logreg_fit(x: &Tensor, y: &[usize], classes: usize, cfg: &LogRegConfig) -> Result<LogReg> {
    let (n, d) = (x.rows(), x.cols());
    if n != y.len() || n == 0 {
        return Err(Error::invalid("features and labels must be non-empty and aligned"));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
        return Err(Error::invalid(format!("label {bad} outside 0..{classes}")));
    }
    let mut present = vec![false; classes];
    y.iter().for_each(|&c| present[c] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid("logistic regression needs at least two classes in training data"));
    }
    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n as f64;
        }
    }
    for i in 0..n {
        for ((s, v), m) in scale.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    let xs = standardize(x, &mean, &scale);
    let p = Problem {
        x: &xs,
        y,
        n,
        d,
        k: classes,
        l2: cfg.l2,
    };

    let dim = (d + 1) * classes;
    let mut w = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut f = p.eval(&w, Some(&mut g));
    let mut step = 1.0;
    let mut iterations = 0;
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut gn = norm(&g);
    let mut trial = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];
    while gn > cfg.tol && iterations < cfg.max_iter {
        iterations += 1;
        let mut t = step;
        let f_new = loop {
            for ((ti, wi), gi) in trial.iter_mut().zip(&w).zip(&g) {
                *ti = wi - t * gi;
            }
            let f_t = p.eval(&trial, None);
            if f_t <= f - 0.5 * t * gn * gn || t < 1e-12 {
                break f_t;
            }
            t *= 0.5;
        };
        p.eval(&trial, Some(&mut g_new));
        // Barzilai-Borwein proposal for the next step
        let (mut sy, mut yy) = (0.0, 0.0);
        for i in 0..dim {
            let s = trial[i] - w[i];
            let dy = g_new[i] - g[i];
            sy += s * dy;
            yy += dy * dy;
        }
        step = if sy > 0.0 && yy > 0.0 { sy / yy } else { 2.0 * t };
        std::mem::swap(&mut w, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        if (f - f_new).abs() == 0.0 && t < 1e-12 {
            break;
        }
        f = f_new;
        gn = norm(&g);
    }
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("logistic regression weights".into()));
    }
    Ok(LogReg {
        mean,
        scale,
        weights: w,
        classes,
        iterations,
        grad_norm: gn,
    })
}

impl LogReg {
    /// Class scores (`n × k` logits).
    pub fn decision(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if x.cols() != d {
            return Err(Error::shape("logreg features", x.shape(), &[x.rows(), d]));
        }
        let k = self.classes;
        let xs = standardize(x, &self.mean, &self.scale);
        let mut out = vec![0.0; x.rows() * k];
        gemm(x.rows(), d, k, &xs, false, &self.weights[..d * k], false, &mut out, false);
        for row in out.chunks_mut(k) {
            for (l, b) in row.iter_mut().zip(&self.weights[d * k..]) {
                *l += b;
            }
        }
        Tensor::new(vec![x.rows(), k], out)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let s = self.decision(x)?;
        Ok((0..s.rows()).map(|i| crate::two_step::argmax(s.row(i))).collect())
    }
}

pub fn logreg_eval(model: &LogReg, x: &Tensor, y: &[usize]) -> Result<f64> {
    let pred = model.predict(x)?;
    if y.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    Ok(pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_two_class() {
        let x = Tensor::from_rows(&[
            vec![0.0, 0.1],
            vec![0.2, -0.1],
            vec![0.1, 0.3],
            vec![2.0, 2.1],
            vec![2.2, 1.9],
            vec![1.8, 2.3],
        ])
        .unwrap();
        let y = [0, 0, 0, 1, 1, 1];
        let m = logreg_fit(&x, &y, 2, &LogRegConfig::default()).unwrap();
        assert_eq!(logreg_eval(&m, &x, &y).unwrap(), 1.0);
    }

    #[test]
    fn single_class_rejected() {
        let x = Tensor::zeros(&[3, 2]);
        assert!(logreg_fit(&x, &[1, 1, 1], 3, &LogRegConfig::default()).is_err());
    }

    #[test]
    fn constant_feature_is_harmless() {
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 3.0]]).unwrap();
        let m = logreg_fit(&x, &[0, 0, 1, 1], 2, &LogRegConfig::default()).unwrap();
        assert_eq!(m.predict(&x).unwrap(), [0, 0, 1, 1]);
    }
}

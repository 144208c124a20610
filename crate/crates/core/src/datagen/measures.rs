use serde::{Deserialize, Serialize};

use super::panel::RawPanel;
use crate::error::{Error, Result};
use crate::stats::{moments, quantile_sorted, std_dev};

/// Trailing one-year window in trading days.
pub const YEAR_DAYS: usize = 252;

/// β̂ and ρ̂ of `stock` against `market` over paired observations.
pub fn beta_rho(stock: &[f64], market: &[f64]) -> Result<(f64, f64)> {
    if stock.len() != market.len() || stock.len() < 2 {
        return Err(Error::invalid("beta needs at least two paired observations"));
    }
    let (cov, var_m, var_s) = moments(market, stock);
    if var_m <= 0.0 || market.iter().all(|&m| m == market[0]) {
        return Err(Error::invalid("market variance is zero over the window"));
    }
    let rho = if var_s > 0.0 && stock.iter().any(|&r| r != stock[0]) {
        (cov / (var_m * var_s).sqrt()).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    Ok((cov / var_m, rho))
}

/// Realised volatility over the next `horizon` returns: `|r|` for a single
/// day, the sample standard deviation otherwise.
pub fn realized_vol(next: &[f64]) -> f64 {
    match next {
        [r] => r.abs(),
        _ => std_dev(next),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub beta: f64,
    pub rho: f64,
    pub vol1: f64,
    pub vol5: f64,
}

/// Measures of ticker `t` as of day `day`: β̂ and ρ̂ over the `window` days
/// ending at `day`, volatilities over the days after it. Days where the
/// ticker has no return are dropped from the window; `None` if the window
/// or the following five days run off the panel or are incomplete.
pub fn measures_at(panel: &RawPanel, t: usize, day: usize, window: usize) -> Result<Option<Measures>> {
    if day + 1 < window || day + 5 >= panel.n_days() {
        return Ok(None);
    }
    let series = &panel.returns[t];
    let (mut s, mut m) = (Vec::with_capacity(window), Vec::with_capacity(window));
    for d in day + 1 - window..=day {
        if let Some(r) = series[d] {
            s.push(r);
            m.push(panel.market[d]);
        }
    }
    if s.len() < window / 2 {
        return Ok(None);
    }
    let next: Option<Vec<f64>> = (day + 1..=day + 5).map(|d| series[d]).collect();
    let Some(next) = next else {
        return Ok(None);
    };
    let (beta, rho) = beta_rho(&s, &m)?;
    Ok(Some(Measures {
        beta,
        rho,
        vol1: realized_vol(&next[..1]),
        vol5: realized_vol(&next),
    }))
}

/// Per-sample measures for windowed samples; `kept` lists the sample
/// indices for which all measures were available.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StockMeasures {
    pub kept: Vec<usize>,
    pub beta: Vec<f64>,
    pub rho: Vec<f64>,
    pub vol1: Vec<f64>,
    pub vol5: Vec<f64>,
}

impl StockMeasures {
    pub fn get(&self, name: &str) -> Result<&[f64]> {
        match name {
            "beta" => Ok(&self.beta),
            "rho" => Ok(&self.rho),
            "vol1" => Ok(&self.vol1),
            "vol5" => Ok(&self.vol5),
            other => Err(Error::invalid(format!(
                "unknown measure `{other}` (expected beta, rho, vol1 or vol5)"
            ))),
        }
    }
}

/// Measures for every `(ticker, end_day)` pair.
pub fn compute_measures(
    panel: &RawPanel,
    anchors: &[(usize, usize)],
    window: usize,
) -> Result<StockMeasures> {
    let mut out = StockMeasures::default();
    for (i, &(t, day)) in anchors.iter().enumerate() {
        if let Some(m) = measures_at(panel, t, day, window)? {
            out.kept.push(i);
            out.beta.push(m.beta);
            out.rho.push(m.rho);
            out.vol1.push(m.vol1);
            out.vol5.push(m.vol5);
        }
    }
    Ok(out)
}

/// Equiprobable bins fitted on training values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBins {
    /// `k − 1` inner edges; class = number of edges `<= v`.
    pub edges: Vec<f64>,
    /// Numeric stand-in per class: midpoint between its edges, and the
    /// `1/(2k)` and `1 − 1/(2k)` quantiles for the two outer classes.
    pub representative: Vec<f64>,
}

impl QuantileBins {
    pub fn fit(values: &[f64], k: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("cannot fit bins on empty training values"));
        }
        if k < 2 {
            return Err(Error::invalid("need at least two bins"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bin training values".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let edges: Vec<f64> = (1..k).map(|c| sorted[(c * n / k).min(n - 1)]).collect();
        let half = 1.0 / (2 * k) as f64;
        let representative = (0..k)
            .map(|c| match c {
                0 => quantile_sorted(&sorted, half),
                c if c == k - 1 => quantile_sorted(&sorted, 1.0 - half),
                c => 0.5 * (edges[c - 1] + edges[c]),
            })
            .collect();
        Ok(Self {
            edges,
            representative,
        })
    }

    pub fn classes(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn assign(&self, v: f64) -> usize {
        self.edges.partition_point(|&e| e <= v)
    }

    pub fn assign_all(&self, values: &[f64]) -> Vec<usize> {
        values.iter().map(|&v| self.assign(v)).collect()
    }
}

/// Four equiprobable classes with edges fitted on `train`, applied to `values`.
pub fn discretize_quartiles(train: &[f64], values: &[f64]) -> Result<Vec<usize>> {
    Ok(QuantileBins::fit(train, 4)?.assign_all(values))
}

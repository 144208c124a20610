use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pricing::{bs_price, estimate_vol, OptionKind};
use crate::datagen::{realized_vol, RawPanel, YEAR_DAYS};
use crate::error::{Error, Result};
use crate::stats::{mean, std_dev};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    /// Trailing days for the measured volatility.
    pub vol_window: usize,
    /// Straddles bought and sold per day.
    pub per_side: usize,
    pub long_expiry_days: usize,
    pub short_expiry_days: usize,
    /// Strike as a multiple of spot.
    pub strike_ratio: f64,
    /// Annualised risk-free rate used in pricing.
    pub rate: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            vol_window: 50,
            per_side: 10,
            long_expiry_days: 60,
            short_expiry_days: 5,
            strike_ratio: 1.05,
            rate: 0.0,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vol_window < 2 || self.per_side == 0 {
            return Err(Error::invalid("vol_window must be ≥ 2 and per_side ≥ 1"));
        }
        if self.long_expiry_days < 2 || self.short_expiry_days < 2 {
            return Err(Error::invalid("option expiries must outlast the one-day holding period"));
        }
        if !(self.strike_ratio > 0.0 && self.rate.is_finite()) {
            return Err(Error::invalid("strike_ratio must be positive and rate finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Long,
    Short,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Long => 1.0,
            Direction::Short => -1.0,
        }
    }
}

/// One asset eligible for trading on a day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub asset: usize,
    pub predicted: f64,
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradeSelection {
    pub long: Vec<usize>,
    pub short: Vec<usize>,
}

/// Ranks candidates by predicted − measured volatility (descending, ties by
/// asset id) and takes `per_side` from each end. `None` when fewer than
/// `2 · per_side` candidates are eligible.
pub fn select_trades(candidates: &[Candidate], per_side: usize) -> Result<Option<TradeSelection>> {
    if candidates.iter().any(|c| !(c.predicted.is_finite() && c.measured.is_finite())) {
        return Err(Error::NonFinite("volatility forecast".into()));
    }
    if candidates.len() < 2 * per_side {
        return Ok(None);
    }
    let mut ranked: Vec<(f64, usize)> = candidates.iter().map(|c| (c.predicted - c.measured, c.asset)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let n = ranked.len();
    Ok(Some(TradeSelection {
        long: ranked[..per_side].iter().map(|r| r.1).collect(),
        short: ranked[n - per_side..].iter().map(|r| r.1).collect(),
    }))
}

/// Call and put prices of a straddle at one strike.
pub fn straddle_value(spot: f64, strike: f64, rate: f64, vol: f64, days: usize) -> Result<(f64, f64)> {
    let t = days as f64 / YEAR_DAYS as f64;
    Ok((
        bs_price(OptionKind::Call, spot, strike, rate, vol, t)?,
        bs_price(OptionKind::Put, spot, strike, rate, vol, t)?,
    ))
}

/// Supplies annualised volatility forecasts made at the close of a day.
pub trait VolForecaster {
    fn forecast(&mut self, panel: &RawPanel, asset: usize, day: usize) -> Result<Option<f64>>;
}

impl<F> VolForecaster for F
where
    F: FnMut(&RawPanel, usize, usize) -> Result<Option<f64>>,
{
    fn forecast(&mut self, panel: &RawPanel, asset: usize, day: usize) -> Result<Option<f64>> {
        self(panel, asset, day)
    }
}

/// Realised volatility over the `horizon` days after `day`, annualised.
pub fn future_vol(panel: &RawPanel, asset: usize, day: usize, horizon: usize) -> Option<f64> {
    if horizon == 0 || day + horizon >= panel.n_days() {
        return None;
    }
    let next: Option<Vec<f64>> = panel.returns[asset][day + 1..=day + horizon].iter().copied().collect();
    next.map(|r| realized_vol(&r) * (YEAR_DAYS as f64).sqrt())
}

/// Looks ahead: forecasts the volatility that is actually realised.
#[derive(Debug, Clone, Copy)]
pub struct OracleVol {
    pub horizon: usize,
}

impl VolForecaster for OracleVol {
    fn forecast(&mut self, panel: &RawPanel, asset: usize, day: usize) -> Result<Option<f64>> {
        Ok(future_vol(panel, asset, day, self.horizon))
    }
}

/// Picks a volatility class uniformly at random and forecasts its
/// representative value.
#[derive(Debug, Clone)]
pub struct RandomClassVol {
    representative: Vec<f64>,
    rng: ChaCha8Rng,
}

impl RandomClassVol {
    pub fn new(representative: Vec<f64>, seed: u64) -> Result<Self> {
        if representative.is_empty() {
            return Err(Error::invalid("random classifier needs at least one class"));
        }
        Ok(Self {
            representative,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl VolForecaster for RandomClassVol {
    fn forecast(&mut self, _: &RawPanel, _: usize, _: usize) -> Result<Option<f64>> {
        let c = self.rng.random_range(0..self.representative.len());
        Ok(Some(self.representative[c]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StraddlePosition {
    pub asset: usize,
    pub direction: Direction,
    pub entry_date: NaiveDate,
    pub strike: f64,
    pub expiry_days: usize,
    pub entry_spot: f64,
    /// Call and put paid at the measured volatility.
    pub entry_call: f64,
    pub entry_put: f64,
    /// Straddle value at the forecast volatility.
    pub model_value: f64,
    pub exit_call: f64,
    pub exit_put: f64,
    pub pnl: f64,
    /// No quote on the exit day; marked at intrinsic value.
    pub flagged: bool,
}

impl StraddlePosition {
    pub fn entry_value(&self) -> f64 {
        self.entry_call + self.entry_put
    }

    pub fn exit_value(&self) -> f64 {
        self.exit_call + self.exit_put
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub n_long: usize,
    pub n_short: usize,
    /// Net P&L over gross entry premium; `None` on a skipped day.
    pub pnl: Option<f64>,
    pub eligible: usize,
    pub flagged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BacktestSummary {
    pub mean: f64,
    pub sd: f64,
    /// Percentage (0–100) of traded days with positive return.
    pub pct_positive: f64,
    pub traded_days: usize,
    pub skipped_days: usize,
}

impl BacktestSummary {
    pub fn from_days(days: &[DayRecord]) -> Self {
        let pnl: Vec<f64> = days.iter().filter_map(|d| d.pnl).collect();
        let positive = pnl.iter().filter(|&&p| p > 0.0).count();
        Self {
            mean: if pnl.is_empty() { 0.0 } else { mean(&pnl) },
            sd: std_dev(&pnl),
            pct_positive: if pnl.is_empty() { 0.0 } else { 100.0 * positive as f64 / pnl.len() as f64 },
            traded_days: pnl.len(),
            skipped_days: days.len() - pnl.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestReport {
    pub days: Vec<DayRecord>,
    pub positions: Vec<StraddlePosition>,
    pub summary: BacktestSummary,
}

impl BacktestReport {
    /// `date,n_long,n_short,pnl`; skipped days have an empty `pnl`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "date,n_long,n_short,pnl")?;
        for d in &self.days {
            let pnl = d.pnl.map_or(String::new(), |p| p.to_string());
            writeln!(w, "{},{},{},{}", d.date, d.n_long, d.n_short, pnl)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Price levels from compounded returns, starting at 100; a missing return
/// carries the previous level and marks the day as unquoted.
fn price_levels(returns: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut level = 100.0;
    returns
        .iter()
        .map(|r| {
            r.map(|r| {
                level *= 1.0 + r;
                level
            })
        })
        .collect()
}

fn last_level(levels: &[Option<f64>], day: usize) -> f64 {
    levels[..=day].iter().rev().find_map(|l| *l).unwrap_or(100.0)
}

fn trailing(returns: &[Option<f64>], day: usize, window: usize) -> Option<Vec<f64>> {
    if day + 1 < window {
        return None;
    }
    returns[day + 1 - window..=day].iter().copied().collect()
}

/// Runs the straddle strategy over every day with a full trailing window
/// and a following day: buy straddles on the assets whose forecast exceeds
/// the measured volatility the most, sell on those where it falls shortest,
/// close everything on the next day. Entry and exit are priced at the
/// measured volatility of the respective day.
pub fn run_backtest(
    panel: &RawPanel,
    forecaster: &mut dyn VolForecaster,
    cfg: &BacktestConfig,
) -> Result<BacktestReport> {
    cfg.validate()?;
    panel.validate()?;
    let n_days = panel.n_days();
    if n_days < cfg.vol_window + 1 {
        return Err(Error::invalid(format!(
            "panel has {n_days} days; the backtest needs at least {} (warm-up plus one exit day)",
            cfg.vol_window + 1
        )));
    }
    let levels: Vec<Vec<Option<f64>>> = panel.returns.iter().map(|r| price_levels(r)).collect();
    let mut days = Vec::new();
    let mut positions = Vec::new();
    for day in cfg.vol_window - 1..n_days - 1 {
        let mut candidates = Vec::new();
        for asset in 0..panel.tickers.len() {
            let Some(window) = trailing(&panel.returns[asset], day, cfg.vol_window) else {
                continue;
            };
            let Some(measured) = estimate_vol(&window, cfg.vol_window) else {
                continue;
            };
            if let Some(predicted) = forecaster.forecast(panel, asset, day)? {
                candidates.push(Candidate {
                    asset,
                    predicted,
                    measured,
                });
            }
        }
        let eligible = candidates.len();
        let Some(selection) = select_trades(&candidates, cfg.per_side)? else {
            days.push(DayRecord {
                date: panel.dates[day],
                n_long: 0,
                n_short: 0,
                pnl: None,
                eligible,
                flagged: 0,
            });
            continue;
        };
        let lookup = |a: usize| candidates.iter().find(|c| c.asset == a).copied().expect("selected asset");
        let legs = selection
            .long
            .iter()
            .map(|&a| (a, Direction::Long, cfg.long_expiry_days))
            .chain(selection.short.iter().map(|&a| (a, Direction::Short, cfg.short_expiry_days)));
        let (mut net, mut gross, mut flagged) = (0.0, 0.0, 0);
        for (asset, direction, expiry_days) in legs {
            let c = lookup(asset);
            let spot = last_level(&levels[asset], day);
            let strike = cfg.strike_ratio * spot;
            let (entry_call, entry_put) = straddle_value(spot, strike, cfg.rate, c.measured, expiry_days)?;
            let (mc, mp) = straddle_value(spot, strike, cfg.rate, c.predicted.max(0.0), expiry_days)?;
            let exit = match (levels[asset][day + 1], trailing(&panel.returns[asset], day + 1, cfg.vol_window)) {
                (Some(next_spot), Some(window)) => {
                    let vol = estimate_vol(&window, cfg.vol_window).unwrap_or(c.measured);
                    Some(straddle_value(next_spot, strike, cfg.rate, vol, expiry_days - 1)?)
                }
                _ => None,
            };
            let (exit_call, exit_put, is_flagged) = match exit {
                Some((ec, ep)) => (ec, ep, false),
                None => ((spot - strike).max(0.0), (strike - spot).max(0.0), true),
            };
            let pnl = direction.sign() * (exit_call + exit_put - entry_call - entry_put);
            net += pnl;
            gross += entry_call + entry_put;
            flagged += usize::from(is_flagged);
            positions.push(StraddlePosition {
                asset,
                direction,
                entry_date: panel.dates[day],
                strike,
                expiry_days,
                entry_spot: spot,
                entry_call,
                entry_put,
                model_value: mc + mp,
                exit_call,
                exit_put,
                pnl,
                flagged: is_flagged,
            });
        }
        if !(net.is_finite() && gross > 0.0) {
            return Err(Error::NonFinite(format!("backtest P&L on {}", panel.dates[day])));
        }
        days.push(DayRecord {
            date: panel.dates[day],
            n_long: selection.long.len(),
            n_short: selection.short.len(),
            pnl: Some(net / gross),
            eligible,
            flagged,
        });
    }
    let summary = BacktestSummary::from_days(&days);
    Ok(BacktestReport {
        days,
        positions,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(asset: usize, diff: f64) -> Candidate {
        Candidate {
            asset,
            predicted: 0.2 + diff,
            measured: 0.2,
        }
    }

    #[test]
    fn selection_sizes_and_ties() {
        let c: Vec<Candidate> = (0..25).map(|a| cand(a, (a as f64 * 0.37).sin())).collect();
        let s = select_trades(&c, 10).unwrap().unwrap();
        assert_eq!((s.long.len(), s.short.len()), (10, 10));
        assert!(s.long.iter().all(|a| !s.short.contains(a)));

        let flat: Vec<Candidate> = (0..30).rev().map(|a| cand(a, 0.0)).collect();
        let s = select_trades(&flat, 10).unwrap().unwrap();
        assert_eq!(s.long, (0..10).collect::<Vec<_>>());
        assert_eq!(s.short, (20..30).collect::<Vec<_>>());

        assert_eq!(select_trades(&c[..19], 10).unwrap(), None);
    }

    #[test]
    fn unchanged_market_is_pure_time_decay() {
        let (spot, strike, vol) = (100.0, 105.0, 0.3);
        for days in [60, 5] {
            let (c0, p0) = straddle_value(spot, strike, 0.0, vol, days).unwrap();
            let (c1, p1) = straddle_value(spot, strike, 0.0, vol, days - 1).unwrap();
            let decay = (c1 + p1) - (c0 + p0);
            assert!(decay < 0.0 && decay.is_finite());
        }
    }
}

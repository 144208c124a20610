use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::capm::MarketPanel;
use super::samples::{parse_err, parse_f64, read_table, Meta, SampleSet};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Daily returns on a shared trading calendar. `returns[t][d]` is `None`
/// when ticker `t` has no return on `dates[d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    pub dates: Vec<NaiveDate>,
    pub market: Vec<f64>,
    pub tickers: Vec<String>,
    pub returns: Vec<Vec<Option<f64>>>,
}

impl RawPanel {
    pub fn validate(&self) -> Result<()> {
        if self.market.len() != self.dates.len() {
            return Err(Error::invalid("market series and calendar lengths differ"));
        }
        if self.dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("calendar dates must be strictly increasing"));
        }
        if self.returns.len() != self.tickers.len()
            || self.returns.iter().any(|r| r.len() != self.dates.len())
        {
            return Err(Error::invalid("return matrix does not match tickers × dates"));
        }
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    /// The calendar days in `range`, all tickers kept.
    pub fn slice_days(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_days() {
            return Err(Error::invalid(format!(
                "day range {range:?} outside the {}-day calendar",
                self.n_days()
            )));
        }
        Ok(Self {
            dates: self.dates[range.clone()].to_vec(),
            market: self.market[range.clone()].to_vec(),
            tickers: self.tickers.clone(),
            returns: self.returns.iter().map(|r| r[range.clone()].to_vec()).collect(),
        })
    }

    /// Days without a return, per ticker.
    pub fn missing_days(&self) -> Vec<usize> {
        self.returns
            .iter()
            .map(|r| r.iter().filter(|v| v.is_none()).count())
            .collect()
    }

    /// Writes `returns.csv` (`date,ticker,ret`) and `market.csv` (`date,ret`).
    pub fn write_csv(&self, returns_path: &Path, market_path: &Path) -> Result<()> {
        let mut m = csv::Writer::from_path(market_path)?;
        m.write_record(["date", "ret"])?;
        for (d, r) in self.dates.iter().zip(&self.market) {
            m.write_record([d.to_string(), r.to_string()])?;
        }
        m.flush()?;
        let mut w = csv::Writer::from_path(returns_path)?;
        w.write_record(["date", "ticker", "ret"])?;
        for (d, date) in self.dates.iter().enumerate() {
            for (t, ticker) in self.tickers.iter().enumerate() {
                if let Some(r) = self.returns[t][d] {
                    w.write_record([date.to_string(), ticker.clone(), r.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_date(path: &Path, line: usize, field: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(field.trim(), "%Y-%m-%d")
        .map_err(|e| parse_err(path, line, format!("date `{field}`: {e}")))
}

/// Loads a panel from `returns.csv` and `market.csv`. The market file
/// defines the calendar; a stock row dated off that calendar is an error.
pub fn load_returns_csv(returns_path: &Path, market_path: &Path) -> Result<RawPanel> {
    let (header, rows) = read_table(market_path)?;
    if header != ["date", "ret"] {
        return Err(parse_err(market_path, 1, "expected header `date,ret`"));
    }
    let mut market = BTreeMap::new();
    for (line, rec) in &rows {
        let date = parse_date(market_path, *line, &rec[0])?;
        let r = parse_f64(market_path, *line, &rec[1])?;
        if market.insert(date, r).is_some() {
            return Err(parse_err(market_path, *line, format!("duplicate date {date}")));
        }
    }
    let dates: Vec<NaiveDate> = market.keys().copied().collect();
    let day_index: BTreeMap<NaiveDate, usize> =
        dates.iter().enumerate().map(|(i, &d)| (d, i)).collect();

    let (header, rows) = read_table(returns_path)?;
    if header != ["date", "ticker", "ret"] {
        return Err(parse_err(returns_path, 1, "expected header `date,ticker,ret`"));
    }
    let mut by_ticker: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for (line, rec) in &rows {
        let date = parse_date(returns_path, *line, &rec[0])?;
        let r = parse_f64(returns_path, *line, &rec[2])?;
        let &d = day_index.get(&date).ok_or_else(|| {
            parse_err(
                returns_path,
                *line,
                format!("date {date} is not a market trading day (calendars misaligned)"),
            )
        })?;
        let series = by_ticker
            .entry(rec[1].clone())
            .or_insert_with(|| vec![None; dates.len()]);
        if series[d].replace(r).is_some() {
            return Err(parse_err(
                returns_path,
                *line,
                format!("duplicate return for {} on {date}", rec[1]),
            ));
        }
    }
    let (tickers, returns) = by_ticker.into_iter().unzip();
    Ok(RawPanel {
        dates,
        market: market.into_values().collect(),
        tickers,
        returns,
    })
}

/// Weekdays from `start` to `end` inclusive.
pub fn weekdays(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

impl MarketPanel {
    /// Lays the periods end to end on a weekday calendar starting at
    /// `start`. Asset `a` of every period becomes ticker `A{a}`.
    pub fn to_raw(&self, start: NaiveDate) -> RawPanel {
        let n_days = self.periods.len() * self.days;
        let dates: Vec<NaiveDate> = start
            .iter_days()
            .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
            .take(n_days)
            .collect();
        let market = self.periods.iter().flat_map(|p| p.market.iter().copied()).collect();
        let n_assets = self.n_assets();
        let tickers = (0..n_assets).map(|a| format!("A{a:05}")).collect();
        let returns = (0..n_assets)
            .map(|a| {
                self.periods
                    .iter()
                    .flat_map(|p| p.assets[a].returns.iter().map(|&r| Some(r)))
                    .collect()
            })
            .collect();
        RawPanel {
            dates,
            market,
            tickers,
            returns,
        }
    }
}

/// Daily panel with time-varying betas and regime-switching idiosyncratic
/// volatility, so that both systematic exposure and future volatility are
/// partly predictable from the past.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DailyPanelConfig {
    pub start_year: i32,
    pub end_year: i32,
    pub n_assets: usize,
    /// Annualised risk-free rate range; redrawn every calendar quarter.
    pub rf_low: f64,
    pub rf_high: f64,
    /// Annualised market excess drift.
    pub market_premium: f64,
    pub market_vol: f64,
    pub beta_low: f64,
    pub beta_high: f64,
    /// Daily probability that an asset's β is redrawn.
    pub beta_redraw: f64,
    pub idio_vol_low: f64,
    pub idio_vol_high: f64,
    /// Daily probability of switching idiosyncratic volatility regime.
    pub regime_switch: f64,
}

impl Default for DailyPanelConfig {
    fn default() -> Self {
        Self {
            start_year: 1975,
            end_year: 2016,
            n_assets: 200,
            rf_low: 0.0,
            rf_high: 0.08,
            market_premium: 0.06,
            market_vol: 0.01,
            beta_low: 0.2,
            beta_high: 2.0,
            beta_redraw: 0.004,
            idio_vol_low: 0.01,
            idio_vol_high: 0.03,
            regime_switch: 0.02,
        }
    }
}

/// Simulates a [`DailyPanelConfig`] panel. Market and assets each draw from
/// their own random stream.
pub fn simulate_daily_panel(cfg: &DailyPanelConfig, seed: u64) -> Result<RawPanel> {
    if cfg.end_year < cfg.start_year || cfg.n_assets == 0 {
        return Err(Error::invalid("daily panel needs a non-empty year span and assets"));
    }
    if !(cfg.rf_low <= cfg.rf_high && cfg.beta_low < cfg.beta_high) {
        return Err(Error::invalid("daily panel ranges must be ordered"));
    }
    let probs = [cfg.beta_redraw, cfg.regime_switch];
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("daily panel probabilities must lie in [0, 1]"));
    }
    let start = NaiveDate::from_ymd_opt(cfg.start_year, 1, 1)
        .ok_or_else(|| Error::invalid("bad start year"))?;
    let end = NaiveDate::from_ymd_opt(cfg.end_year, 12, 31)
        .ok_or_else(|| Error::invalid("bad end year"))?;
    let dates = weekdays(start, end);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rf_d = Vec::with_capacity(dates.len());
    let mut market = Vec::with_capacity(dates.len());
    let mut current_q = None;
    let mut rf = 0.0;
    for d in &dates {
        let q = (d.year(), d.month0() / 3);
        if current_q != Some(q) {
            current_q = Some(q);
            rf = if cfg.rf_high > cfg.rf_low {
                rng.random_range(cfg.rf_low..cfg.rf_high)
            } else {
                cfg.rf_low
            };
        }
        let daily_rf = rf / 252.0;
        let z: f64 = rng.sample(StandardNormal);
        rf_d.push(daily_rf);
        market.push(daily_rf + cfg.market_premium / 252.0 + cfg.market_vol * z);
    }

    let returns = (0..cfg.n_assets)
        .map(|a| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(a as u64 + 1);
            let mut beta = rng.random_range(cfg.beta_low..cfg.beta_high);
            let mut high = rng.random_bool(0.5);
            market
                .iter()
                .zip(&rf_d)
                .map(|(&rm, &rfd)| {
                    if rng.random_bool(cfg.beta_redraw) {
                        beta = rng.random_range(cfg.beta_low..cfg.beta_high);
                    }
                    if rng.random_bool(cfg.regime_switch) {
                        high = !high;
                    }
                    let vol = if high { cfg.idio_vol_high } else { cfg.idio_vol_low };
                    let z: f64 = rng.sample(StandardNormal);
                    Some(rfd + beta * (rm - rfd) + vol * z)
                })
                .collect()
        })
        .collect();
    Ok(RawPanel {
        dates,
        market,
        tickers: (0..cfg.n_assets).map(|a| format!("S{a:04}")).collect(),
        returns,
    })
}

/// Calendar span to window and how many days to take per quarter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarterSpan {
    pub start_year: i32,
    pub end_year: i32,
    pub days: usize,
}

impl QuarterSpan {
    pub fn new(start_year: i32, end_year: i32) -> Self {
        Self {
            start_year,
            end_year,
            days: 50,
        }
    }

    pub fn n_labels(&self) -> usize {
        ((self.end_year - self.start_year + 1).max(0) * 4) as usize
    }

    fn label(&self, date: NaiveDate) -> Option<usize> {
        let y = date.year();
        (self.start_year..=self.end_year)
            .contains(&y)
            .then(|| ((y - self.start_year) * 4) as usize + date.month0() as usize / 3)
    }
}

/// What [`window_quarters`] left out.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WindowReport {
    /// Quarter labels with fewer market trading days than required.
    pub short_quarters: Vec<usize>,
    /// `(ticker index, quarter label)` pairs with too few returns.
    pub skipped: Vec<(usize, usize)>,
}

/// Cuts a panel into one sample per (ticker, quarter) in `span`: the
/// ticker's first `span.days` returns of the quarter followed by the market
/// returns on the same dates. Labels count quarters from the span start.
///
/// Meta columns: `ticker, quarter, start_day, end_day` (day indices into the
/// panel calendar, inclusive).
pub fn window_quarters(panel: &RawPanel, span: &QuarterSpan) -> Result<(SampleSet, WindowReport)> {
    panel.validate()?;
    if span.days == 0 || span.n_labels() == 0 {
        return Err(Error::invalid("quarter span must cover at least one quarter"));
    }
    let mut quarters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (d, &date) in panel.dates.iter().enumerate() {
        if let Some(label) = span.label(date) {
            quarters.entry(label).or_default().push(d);
        }
    }
    if quarters.is_empty() {
        return Err(Error::invalid(format!(
            "panel has no trading days in {}..={}",
            span.start_year, span.end_year
        )));
    }

    let mut report = WindowReport::default();
    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut meta = Vec::new();
    for label in 0..span.n_labels() {
        let days = quarters.get(&label).map_or(&[][..], Vec::as_slice);
        if days.len() < span.days {
            report.short_quarters.push(label);
            continue;
        }
        for (t, series) in panel.returns.iter().enumerate() {
            let used: Vec<usize> = days
                .iter()
                .copied()
                .filter(|&d| series[d].is_some())
                .take(span.days)
                .collect();
            if used.len() < span.days {
                report.skipped.push((t, label));
                continue;
            }
            data.extend(used.iter().map(|&d| series[d].unwrap_or_default()));
            data.extend(used.iter().map(|&d| panel.market[d]));
            y.push(label);
            meta.push(vec![
                t as f64,
                label as f64,
                used[0] as f64,
                used[used.len() - 1] as f64,
            ]);
        }
    }
    let columns = ["ticker", "quarter", "start_day", "end_day"]
        .map(String::from)
        .to_vec();
    let x = Tensor::new(vec![y.len(), 2 * span.days], data)?;
    let set = SampleSet::new(x, y, span.n_labels(), Some(Meta::new(columns, meta)?))?;
    Ok((set, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::capm::{gen_capm, CapmConfig};

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn capm_panel_csv_round_trip() {
        let cfg = CapmConfig {
            n_periods: 3,
            n_assets: 5,
            ..CapmConfig::default()
        };
        let (panel, _) = gen_capm(&cfg, 4).unwrap();
        let raw = panel.to_raw(date(2000, 1, 3));
        raw.validate().unwrap();
        assert_eq!(raw.n_days(), 150);
        let dir = tempfile::tempdir().unwrap();
        let (r, m) = (dir.path().join("returns.csv"), dir.path().join("market.csv"));
        raw.write_csv(&r, &m).unwrap();
        assert_eq!(load_returns_csv(&r, &m).unwrap(), raw);
    }

    #[test]
    fn malformed_return_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let (r, m) = (dir.path().join("returns.csv"), dir.path().join("market.csv"));
        std::fs::write(&m, "date,ret\n2001-01-02,0.01\n2001-01-03,0.02\n").unwrap();
        std::fs::write(&r, "date,ticker,ret\n2001-01-02,X,0.5\n2001-01-03,X,0.x1\n").unwrap();
        let err = load_returns_csv(&r, &m).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().contains(":3:"));
    }

    #[test]
    fn misaligned_dates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (r, m) = (dir.path().join("returns.csv"), dir.path().join("market.csv"));
        std::fs::write(&m, "date,ret\n2001-01-02,0.01\n").unwrap();
        std::fs::write(&r, "date,ticker,ret\n2001-01-02,X,0.5\n2001-01-04,X,0.1\n").unwrap();
        let err = load_returns_csv(&r, &m).unwrap_err();
        assert!(err.to_string().contains("misaligned"), "{err}");
    }

    #[test]
    fn missing_days_counted() {
        let dir = tempfile::tempdir().unwrap();
        let (r, m) = (dir.path().join("returns.csv"), dir.path().join("market.csv"));
        std::fs::write(&m, "date,ret\n2001-01-02,0.01\n2001-01-03,0.0\n2001-01-04,0.0\n").unwrap();
        std::fs::write(&r, "date,ticker,ret\n2001-01-02,B,0.5\n2001-01-04,A,0.1\n2001-01-03,B,0\n").unwrap();
        let p = load_returns_csv(&r, &m).unwrap();
        assert_eq!(p.tickers, ["A", "B"]);
        assert_eq!(p.missing_days(), [2, 1]);
    }

    #[test]
    fn quarter_labels_cover_span() {
        let span = QuarterSpan::new(1976, 2009);
        assert_eq!(span.n_labels(), 136);
        assert_eq!(span.label(date(1976, 1, 5)), Some(0));
        assert_eq!(span.label(date(1976, 4, 1)), Some(1));
        assert_eq!(span.label(date(2009, 12, 31)), Some(135));
        assert_eq!(span.label(date(2010, 1, 4)), None);
    }

    #[test]
    fn windowing_copies_panel_entries() {
        let cfg = DailyPanelConfig {
            start_year: 2001,
            end_year: 2002,
            n_assets: 3,
            ..DailyPanelConfig::default()
        };
        let panel = simulate_daily_panel(&cfg, 1).unwrap();
        let (set, report) = window_quarters(&panel, &QuarterSpan::new(2001, 2002)).unwrap();
        assert!(report.short_quarters.is_empty() && report.skipped.is_empty());
        assert_eq!(set.len(), 3 * 8);
        assert_eq!(set.width(), 100);
        let meta = set.meta().unwrap();
        for i in 0..set.len() {
            let t = meta.rows[i][0] as usize;
            let start = meta.rows[i][2] as usize;
            let row = set.x().row(i);
            for k in 0..50 {
                assert_eq!(row[k], panel.returns[t][start + k].unwrap());
                assert_eq!(row[50 + k], panel.market[start + k]);
            }
        }
    }

    #[test]
    fn stock_listed_outside_span_yields_nothing() {
        let cfg = DailyPanelConfig {
            start_year: 2009,
            end_year: 2011,
            n_assets: 2,
            ..DailyPanelConfig::default()
        };
        let mut panel = simulate_daily_panel(&cfg, 2).unwrap();
        for (d, date) in panel.dates.iter().enumerate() {
            if date.year() != 2011 {
                panel.returns[1][d] = None;
            }
        }
        let (set, report) = window_quarters(&panel, &QuarterSpan::new(2009, 2010)).unwrap();
        let tickers = set.meta().unwrap().column("ticker").unwrap();
        assert!(tickers.iter().all(|&t| t == 0.0));
        assert_eq!(report.skipped.len(), 8);
    }

    #[test]
    fn simulated_panel_is_deterministic() {
        let cfg = DailyPanelConfig {
            start_year: 2000,
            end_year: 2000,
            n_assets: 4,
            ..DailyPanelConfig::default()
        };
        let a = simulate_daily_panel(&cfg, 8).unwrap();
        assert_eq!(a, simulate_daily_panel(&cfg, 8).unwrap());
        assert_ne!(a, simulate_daily_panel(&cfg, 9).unwrap());
        assert_eq!(a.n_days(), 260);
    }
}

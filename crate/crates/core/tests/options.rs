use disentangle::datagen::{simulate_daily_panel, DailyPanelConfig, QuantileBins, RawPanel};
use disentangle::options::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Cox-Ross-Rubinstein price of a European option, summed over terminal
/// nodes with log-space binomial weights.
fn crr_price(kind: OptionKind, spot: f64, strike: f64, r: f64, vol: f64, t: f64, steps: usize) -> f64 {
    let dt = t / steps as f64;
    let u = (vol * dt.sqrt()).exp();
    let d = 1.0 / u;
    let p = ((r * dt).exp() - d) / (u - d);
    let n = steps as f64;
    let ln_fact_n = libm::lgamma(n + 1.0);
    let mut total = 0.0;
    for k in 0..=steps {
        let kf = k as f64;
        let s_t = spot * u.powf(kf) * d.powf(n - kf);
        let payoff = match kind {
            OptionKind::Call => (s_t - strike).max(0.0),
            OptionKind::Put => (strike - s_t).max(0.0),
        };
        if payoff == 0.0 {
            continue;
        }
        let ln_w = ln_fact_n - libm::lgamma(kf + 1.0) - libm::lgamma(n - kf + 1.0) + kf * p.ln() + (n - kf) * (1.0 - p).ln();
        total += ln_w.exp() * payoff;
    }
    (-r * t).exp() * total
}

fn grid() -> Vec<(f64, f64, f64, f64, f64)> {
    let mut g = Vec::new();
    for spot in [85.0, 95.0, 100.0, 105.0, 115.0] {
        for strike in [90.0, 100.0, 105.0, 110.0, 120.0] {
            for vol in [0.25, 0.45] {
                for t in [0.5, 1.0] {
                    for r in [0.0, 0.05] {
                        g.push((spot, strike, vol, t, r));
                    }
                }
            }
        }
    }
    g
}

#[test]
fn black_scholes_matches_binomial_tree_on_grid() {
    let g = grid();
    assert_eq!(g.len(), 200);
    let mut worst: f64 = 0.0;
    for &(spot, strike, vol, t, r) in &g {
        for kind in [OptionKind::Call, OptionKind::Put] {
            let bs = bs_price(kind, spot, strike, r, vol, t).unwrap();
            let tree = crr_price(kind, spot, strike, r, vol, t, 10_000);
            worst = worst.max((bs - tree).abs() / tree);
        }
    }
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

#[test]
fn at_the_money_reference_value() {
    let tree = crr_price(OptionKind::Call, 100.0, 100.0, 0.0, 0.2, 1.0, 10_000);
    let bs = bs_price(OptionKind::Call, 100.0, 100.0, 0.0, 0.2, 1.0).unwrap();
    assert!((bs - tree).abs() / tree < 1e-3);
    assert!((bs - 7.9656).abs() < 1e-4);
}

#[test]
fn parity_bounds_and_vol_monotonicity() {
    for &(spot, strike, _, t, r) in &grid() {
        let mut prev = (0.0, 0.0);
        for i in 0..=40 {
            let vol = i as f64 * 0.025;
            let call = OptionQuote::new(OptionKind::Call, spot, strike, r, vol, t).unwrap();
            let put = OptionQuote::new(OptionKind::Put, spot, strike, r, vol, t).unwrap();
            let parity = spot - strike * (-r * t).exp();
            assert!((call.price - put.price - parity).abs() <= 1e-10);
            for q in [call, put] {
                assert!(q.price >= 0.0);
                assert!(q.price >= lower_bound(q.kind, spot, strike, r, t) - 1e-12);
            }
            assert!(call.price >= prev.0 - 1e-12 && put.price >= prev.1 - 1e-12);
            prev = (call.price, put.price);
        }
    }
}

#[test]
fn parity_on_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    use rand::Rng;
    for _ in 0..1000 {
        let spot = rng.random_range(1.0..500.0);
        let strike = spot * rng.random_range(0.5..1.5);
        let r = rng.random_range(0.0..0.1);
        let vol = rng.random_range(0.0..1.5);
        let t = rng.random_range(0.01..3.0);
        let c = bs_price(OptionKind::Call, spot, strike, r, vol, t).unwrap();
        let p = bs_price(OptionKind::Put, spot, strike, r, vol, t).unwrap();
        assert!((c - p - (spot - strike * (-r * t).exp())).abs() <= 1e-10 * spot.max(1.0));
    }
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn integrated_cdf(x: f64) -> f64 {
    let pdf = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (a, b) = (0.0f64.min(x), 0.0f64.max(x));
    let m = 0.5 * (a + b);
    let whole = (b - a) / 6.0 * (pdf(a) + 4.0 * pdf(m) + pdf(b));
    let area = simpson(&pdf, a, b, pdf(a), pdf(m), pdf(b), whole, 1e-16, 40);
    if x >= 0.0 {
        0.5 + area
    } else {
        0.5 - area
    }
}

#[test]
fn normal_cdf_against_numerical_integration() {
    assert_eq!(norm_cdf(0.0), 0.5);
    for i in -80..=80 {
        let x = i as f64 * 0.1;
        assert!((norm_cdf(x) - integrated_cdf(x)).abs() <= 1e-12, "x = {x}");
        assert!((norm_cdf(-x) - (1.0 - norm_cdf(x))).abs() <= 1e-15);
    }
    assert!((norm_cdf(1.0) - 0.8413447).abs() < 1e-7);
}

#[test]
fn vol_estimate_sampling_distribution() {
    let s = 0.02;
    let target = s * 252f64.sqrt();
    let normal = Normal::new(0.0, s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws: Vec<f64> = (0..2000)
        .map(|_| {
            let r: Vec<f64> = (0..50).map(|_| normal.sample(&mut rng)).collect();
            estimate_vol(&r, 50).unwrap() / target
        })
        .collect();
    let avg = draws.iter().sum::<f64>() / draws.len() as f64;
    // E[s_n] / σ = c4(50) ≈ 0.99490
    assert!((avg - 0.9949).abs() < 0.005, "{avg}");
    let within = draws.iter().filter(|d| (*d - 1.0).abs() <= 0.15).count() as f64 / draws.len() as f64;
    // P(|χ_49 / √49 − 1| ≤ 0.15) = 0.86281 (scipy chi2 cdf); band ≈ 3 binomial sd
    assert!((within - 0.86281).abs() < 0.025, "{within}");
    assert_eq!(estimate_vol(&[0.0; 49], 50), None);
}

fn sim_panel() -> RawPanel {
    let cfg = DailyPanelConfig {
        start_year: 2000,
        end_year: 2001,
        n_assets: 40,
        ..DailyPanelConfig::default()
    };
    simulate_daily_panel(&cfg, 3).unwrap()
}

fn random_baseline(panel: &RawPanel, seed: u64) -> RandomClassVol {
    let vols: Vec<f64> = (0..panel.tickers.len())
        .flat_map(|a| (0..panel.n_days()).filter_map(move |d| future_vol(panel, a, d, 1)))
        .collect();
    RandomClassVol::new(QuantileBins::fit(&vols, 4).unwrap().representative, seed).unwrap()
}

#[test]
fn oracle_beats_random_on_simulated_panel() {
    let panel = sim_panel();
    let cfg = BacktestConfig::default();
    let oracle = run_backtest(&panel, &mut OracleVol { horizon: 1 }, &cfg).unwrap();
    let random = run_backtest(&panel, &mut random_baseline(&panel, 1), &cfg).unwrap();
    for report in [&oracle, &random] {
        assert!(report.summary.traded_days >= 200);
        for d in report.days.iter().filter(|d| d.pnl.is_some()) {
            assert_eq!((d.n_long, d.n_short), (10, 10));
            assert!(d.pnl.unwrap().is_finite());
        }
        assert!(report.positions.iter().all(|p| p.pnl.is_finite()));
        let again = BacktestSummary::from_days(&report.days);
        assert!((again.mean - report.summary.mean).abs() <= 1e-12);
        assert!((again.sd - report.summary.sd).abs() <= 1e-12);
    }
    assert!(
        oracle.summary.mean > random.summary.mean,
        "oracle {} vs random {}",
        oracle.summary.mean,
        random.summary.mean
    );
}

#[test]
fn backtest_is_deterministic_and_writes_csv() {
    let panel = sim_panel();
    let cfg = BacktestConfig::default();
    let a = run_backtest(&panel, &mut random_baseline(&panel, 9), &cfg).unwrap();
    let b = run_backtest(&panel, &mut random_baseline(&panel, 9), &cfg).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("backtest.csv");
    a.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("date,n_long,n_short,pnl\n"));
    assert_eq!(text.lines().count(), a.days.len() + 1);
}

#[test]
fn thin_universe_skips_days_and_missing_exit_is_flagged() {
    let mut panel = sim_panel();
    panel.tickers.truncate(19);
    panel.returns.truncate(19);
    let r = run_backtest(&panel, &mut OracleVol { horizon: 1 }, &BacktestConfig::default()).unwrap();
    assert_eq!(r.summary.traded_days, 0);
    assert!(r.days.iter().all(|d| d.n_long == 0 && d.pnl.is_none()));

    let mut panel = sim_panel();
    panel.tickers.truncate(20);
    panel.returns.truncate(20);
    let day = 60;
    panel.returns[0][day + 1] = None;
    // exactly 20 eligible on `day`: asset 0 is traded either way
    let mut constant = |_: &RawPanel, _: usize, _: usize| Ok(Some(0.3));
    let r = run_backtest(&panel, &mut constant, &BacktestConfig::default()).unwrap();
    let rec = r.days.iter().find(|d| d.date == panel.dates[day]).unwrap();
    assert_eq!(rec.flagged, 1);
    let pos = r
        .positions
        .iter()
        .find(|p| p.asset == 0 && p.entry_date == panel.dates[day])
        .unwrap();
    assert!(pos.flagged);
    assert_eq!(pos.exit_call + pos.exit_put, (pos.strike - pos.entry_spot).abs());
}

#[test]
fn short_panel_is_rejected() {
    let mut panel = sim_panel();
    panel.dates.truncate(50);
    panel.market.truncate(50);
    panel.returns.iter_mut().for_each(|r| r.truncate(50));
    assert!(run_backtest(&panel, &mut OracleVol { horizon: 1 }, &BacktestConfig::default()).is_err());
}

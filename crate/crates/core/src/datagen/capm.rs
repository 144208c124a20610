use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::samples::{Meta, SampleSet};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapmConfig {
    pub n_periods: usize,
    pub days: usize,
    pub n_assets: usize,
    pub rf_low: f64,
    pub rf_high: f64,
    /// Scale of the period's expected-market-return draw around `rf/days`
    /// (divided by `days`).
    pub premium_sd: f64,
    pub market_noise: f64,
    pub idio_noise: f64,
    pub beta_low: f64,
    pub beta_high: f64,
    /// Gaussian noise added to every entry of the sample rows (not the panel).
    pub augment_sigma: f64,
    /// Force every asset's β to this value.
    pub fixed_beta: Option<f64>,
}

impl Default for CapmConfig {
    fn default() -> Self {
        Self {
            n_periods: 150,
            days: 50,
            n_assets: 1500,
            rf_low: 0.0025,
            rf_high: 0.03,
            premium_sd: 0.04,
            market_noise: 0.0005,
            idio_noise: 0.0005,
            beta_low: -1.0,
            beta_high: 3.0,
            augment_sigma: 0.0005,
            fixed_beta: None,
        }
    }
}

impl CapmConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("premium_sd", self.premium_sd),
            ("market_noise", self.market_noise),
            ("idio_noise", self.idio_noise),
            ("augment_sigma", self.augment_sigma),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
        }
        if self.n_periods == 0 || self.days == 0 || self.n_assets == 0 {
            return Err(Error::invalid("n_periods, days and n_assets must be positive"));
        }
        if !(self.rf_low < self.rf_high) {
            return Err(Error::invalid("rf_low must be below rf_high"));
        }
        if !(self.beta_low < self.beta_high) {
            return Err(Error::invalid("beta_low must be below beta_high"));
        }
        if self.fixed_beta.is_some_and(|b| !b.is_finite()) {
            return Err(Error::invalid("fixed_beta must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetSeries {
    pub beta: f64,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Period {
    /// Period risk-free rate; the daily rate is `rf / days`.
    pub rf: f64,
    /// Expected daily market return.
    pub e_rm: f64,
    pub market: Vec<f64>,
    pub assets: Vec<AssetSeries>,
}

/// Simulated CAPM market: the label of period `p` is `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPanel {
    pub days: usize,
    pub periods: Vec<Period>,
}

impl MarketPanel {
    pub fn n_assets(&self) -> usize {
        self.periods.first().map_or(0, |p| p.assets.len())
    }
}

/// Stream id for `(period, asset)`; `asset = None` is the period's own stream.
fn stream(n_assets: usize, period: usize, asset: Option<usize>) -> u64 {
    (period * (n_assets + 1) + asset.map_or(0, |a| a + 1)) as u64
}

fn rng_for(seed: u64, n_assets: usize, period: usize, asset: Option<usize>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream(n_assets, period, asset));
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Simulates the market panel and the matching samples.
///
/// Each period draws `rf ~ U[rf_low, rf_high]`, `E[R_m] = rf/days +
/// premium_sd/days·N(0,1)` and daily market returns `E[R_m] +
/// market_noise·N(0,1)`. Each asset draws `β ~ U[beta_low, beta_high]` and
/// earns `rf/days + β(R_m − rf/days) + idio_noise·N(0,1)` per day.
///
/// Sample rows are the asset's returns followed by the market's, labelled
/// by period. Meta columns: `period, asset, beta, e_rm, rf`.
/// Every `(period, asset)` pair has its own random stream, so the output
/// does not depend on generation order.
pub fn gen_capm(cfg: &CapmConfig, seed: u64) -> Result<(MarketPanel, SampleSet)> {
    cfg.validate()?;
    let d = cfg.days as f64;
    let mut periods = Vec::with_capacity(cfg.n_periods);
    let width = 2 * cfg.days;
    let n = cfg.n_periods * cfg.n_assets;
    let mut data = Vec::with_capacity(n * width);
    let mut y = Vec::with_capacity(n);
    let mut meta = Vec::with_capacity(n);

    for p in 0..cfg.n_periods {
        let mut rng = rng_for(seed, cfg.n_assets, p, None);
        let rf = rng.random_range(cfg.rf_low..cfg.rf_high);
        let rf_d = rf / d;
        let e_rm = rf_d + cfg.premium_sd / d * normal(&mut rng);
        let market: Vec<f64> = (0..cfg.days)
            .map(|_| e_rm + cfg.market_noise * normal(&mut rng))
            .collect();

        let mut assets = Vec::with_capacity(cfg.n_assets);
        for a in 0..cfg.n_assets {
            let mut rng = rng_for(seed, cfg.n_assets, p, Some(a));
            let beta = match cfg.fixed_beta {
                Some(b) => b,
                None => rng.random_range(cfg.beta_low..cfg.beta_high),
            };
            let returns: Vec<f64> = market
                .iter()
                .map(|&rm| rf_d + beta * (rm - rf_d) + cfg.idio_noise * normal(&mut rng))
                .collect();
            let row = returns.iter().chain(&market).map(|&v| {
                if cfg.augment_sigma > 0.0 {
                    v + cfg.augment_sigma * normal(&mut rng)
                } else {
                    v
                }
            });
            data.extend(row);
            y.push(p);
            meta.push(vec![p as f64, a as f64, beta, e_rm, rf]);
            assets.push(AssetSeries { beta, returns });
        }
        periods.push(Period {
            rf,
            e_rm,
            market,
            assets,
        });
    }

    let columns = ["period", "asset", "beta", "e_rm", "rf"]
        .map(String::from)
        .to_vec();
    let x = Tensor::new(vec![n, width], data)?;
    let samples = SampleSet::new(x, y, cfg.n_periods, Some(Meta::new(columns, meta)?))?;
    Ok((
        MarketPanel {
            days: cfg.days,
            periods,
        },
        samples,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CapmConfig {
        CapmConfig {
            n_periods: 4,
            n_assets: 6,
            ..CapmConfig::default()
        }
    }

    #[test]
    fn shapes_and_labels() {
        let (panel, s) = gen_capm(&small(), 3).unwrap();
        assert_eq!(s.len(), 24);
        assert_eq!(s.width(), 100);
        assert_eq!(s.n_classes(), 4);
        assert_eq!(panel.periods.len(), 4);
        assert!(panel.periods.iter().all(|p| p.market.len() == 50 && p.assets.len() == 6));
        for p in &panel.periods {
            assert!((0.0025..0.03).contains(&p.rf));
            assert!(p.assets.iter().all(|a| (-1.0..3.0).contains(&a.beta)));
        }
    }

    #[test]
    fn unit_beta_without_noise_tracks_market_exactly() {
        let cfg = CapmConfig {
            market_noise: 0.0,
            idio_noise: 0.0,
            augment_sigma: 0.0,
            fixed_beta: Some(1.0),
            ..small()
        };
        let (panel, s) = gen_capm(&cfg, 9).unwrap();
        for p in &panel.periods {
            for a in &p.assets {
                assert_eq!(a.returns, p.market);
            }
        }
        for i in 0..s.len() {
            let r = s.x().row(i);
            assert_eq!(r[..50], r[50..]);
        }
    }

    #[test]
    fn noiseless_excess_returns_scale_by_beta() {
        let cfg = CapmConfig {
            idio_noise: 0.0,
            augment_sigma: 0.0,
            ..small()
        };
        let (panel, _) = gen_capm(&cfg, 2).unwrap();
        for p in &panel.periods {
            let rf_d = p.rf / 50.0;
            for a in &p.assets {
                for (r, m) in a.returns.iter().zip(&p.market) {
                    assert!(((r - rf_d) - a.beta * (m - rf_d)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn streams_are_independent_of_panel_size() {
        // period 0, asset 0 has its own stream
        let (a, _) = gen_capm(&small(), 5).unwrap();
        let cfg = CapmConfig {
            n_periods: 2,
            ..small()
        };
        let (b, _) = gen_capm(&cfg, 5).unwrap();
        assert_eq!(a.periods[..2], b.periods[..]);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            CapmConfig { rf_low: 0.05, ..small() },
            CapmConfig { n_assets: 0, ..small() },
            CapmConfig { idio_noise: -1.0, ..small() },
            CapmConfig { beta_low: 3.0, ..small() },
        ] {
            assert!(gen_capm(&cfg, 0).is_err());
        }
    }
}

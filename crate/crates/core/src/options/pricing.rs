use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::datagen::YEAR_DAYS;
use crate::error::{Error, Result};
use crate::stats::std_dev;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

fn check_inputs(spot: f64, strike: f64, rate: f64, vol: f64, expiry: f64) -> Result<()> {
    if !(spot.is_finite() && strike.is_finite() && rate.is_finite() && vol.is_finite() && expiry.is_finite()) {
        return Err(Error::NonFinite("option pricing inputs".into()));
    }
    if spot <= 0.0 || strike <= 0.0 || expiry <= 0.0 {
        return Err(Error::invalid(format!(
            "spot, strike and expiry must be positive (got {spot}, {strike}, {expiry})"
        )));
    }
    if vol < 0.0 {
        return Err(Error::invalid(format!("volatility must be non-negative, got {vol}")));
    }
    Ok(())
}

/// Black-Scholes price of a European option. `rate` and `vol` are
/// annualised, `expiry` is in years. With zero volatility the price is the
/// discounted intrinsic value.
pub fn bs_price(kind: OptionKind, spot: f64, strike: f64, rate: f64, vol: f64, expiry: f64) -> Result<f64> {
    check_inputs(spot, strike, rate, vol, expiry)?;
    let pv_strike = strike * (-rate * expiry).exp();
    if vol == 0.0 {
        return Ok(match kind {
            OptionKind::Call => (spot - pv_strike).max(0.0),
            OptionKind::Put => (pv_strike - spot).max(0.0),
        });
    }
    let sd = vol * expiry.sqrt();
    let d1 = ((spot / strike).ln() + (rate + 0.5 * vol * vol) * expiry) / sd;
    let d2 = d1 - sd;
    // put written with Φ(−d) rather than as call − spot + pv_strike: equal
    // by parity, without the cancellation for far out-of-the-money puts
    Ok(match kind {
        OptionKind::Call => spot * norm_cdf(d1) - pv_strike * norm_cdf(d2),
        OptionKind::Put => pv_strike * norm_cdf(-d2) - spot * norm_cdf(-d1),
    })
}

/// Discounted intrinsic value, the no-arbitrage lower bound of a European
/// option price.
pub fn lower_bound(kind: OptionKind, spot: f64, strike: f64, rate: f64, expiry: f64) -> f64 {
    let pv_strike = strike * (-rate * expiry).exp();
    match kind {
        OptionKind::Call => (spot - pv_strike).max(0.0),
        OptionKind::Put => (pv_strike - spot).max(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub kind: OptionKind,
    pub spot: f64,
    pub strike: f64,
    pub rate: f64,
    pub vol: f64,
    pub expiry: f64,
    pub price: f64,
}

impl OptionQuote {
    pub fn new(kind: OptionKind, spot: f64, strike: f64, rate: f64, vol: f64, expiry: f64) -> Result<Self> {
        let price = bs_price(kind, spot, strike, rate, vol, expiry)?;
        Ok(Self {
            kind,
            spot,
            strike,
            rate,
            vol,
            expiry,
            price,
        })
    }
}

/// Annualised volatility from the last `window` daily returns; `None` when
/// fewer are available.
pub fn estimate_vol(returns: &[f64], window: usize) -> Option<f64> {
    if window < 2 || returns.len() < window {
        return None;
    }
    let tail = &returns[returns.len() - window..];
    if tail.iter().all(|&r| r == tail[0]) {
        return Some(0.0);
    }
    Some(std_dev(tail) * (YEAR_DAYS as f64).sqrt())
}

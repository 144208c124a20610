use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::stats::pearson;

use super::pca::{pca_fit, pca_project};

/// `|r|` between the first principal component of the S codes, averaged
/// per period, and the period's mean market return.
///
/// `periods[i]` is the period of code row `i`; `market[p]` the mean market
/// return of period `p`.
pub fn market_correlation(s_codes: &Tensor, periods: &[usize], market: &[f64]) -> Result<f64> {
    if s_codes.rows() != periods.len() {
        return Err(Error::invalid("codes and periods are not aligned"));
    }
    let scores = pca_project(&pca_fit(s_codes, 1)?, s_codes)?;
    let n_periods = market.len();
    let mut sum = vec![0.0; n_periods];
    let mut count = vec![0usize; n_periods];
    for (i, &p) in periods.iter().enumerate() {
        if p >= n_periods {
            return Err(Error::invalid(format!("period {p} has no market return")));
        }
        sum[p] += scores.data()[i];
        count[p] += 1;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n_periods)
        .filter(|&p| count[p] > 0)
        .map(|p| (sum[p] / count[p] as f64, market[p]))
        .unzip();
    if xs.len() < 3 {
        return Err(Error::invalid("market correlation needs at least three periods"));
    }
    Ok(pearson(&xs, &ys).map_or(0.0, f64::abs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_market_gives_unit_correlation() {
        let market: Vec<f64> = (0..12).map(|p| ((p * 7 % 5) as f64 - 2.0) * 0.01).collect();
        let mut rows = Vec::new();
        let mut periods = Vec::new();
        for (p, &m) in market.iter().enumerate() {
            for _ in 0..3 {
                let mut r = vec![0.0; 20];
                r[3] = m;
                r[7] = -2.0 * m;
                rows.push(r);
                periods.push(p);
            }
        }
        let s = Tensor::from_rows(&rows).unwrap();
        let r = market_correlation(&s, &periods, &market).unwrap();
        assert!((r - 1.0).abs() < 1e-9, "{r}");
        assert!(market_correlation(&s.select_rows(&[0, 3]), &[0, 1], &market).is_err());
    }
}

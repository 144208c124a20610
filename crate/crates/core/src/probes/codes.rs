use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nets::Network;

fn check_pair(decoder: &Network, s: &Tensor, z: &Tensor) -> Result<()> {
    if s.rows() != z.rows() || s.cols() + z.cols() != decoder.input_width() {
        return Err(Error::shape(
            "decoder input",
            &[s.rows(), s.cols() + z.cols()],
            &[z.rows(), decoder.input_width()],
        ));
    }
    Ok(())
}

fn join(s: &[f64], z: &[f64]) -> Vec<f64> {
    s.iter().chain(z).copied().collect()
}

/// Decodes `S` rows from one source with `Z` rows from another (row-wise).
pub fn swap(decoder: &Network, s_from: &Tensor, z_from: &Tensor) -> Result<Tensor> {
    check_pair(decoder, s_from, z_from)?;
    let rows: Vec<Vec<f64>> = (0..s_from.rows())
        .map(|i| join(s_from.row(i), z_from.row(i)))
        .collect();
    decoder.predict(&Tensor::from_rows(&rows)?)
}

/// Every `(S of source i, Z of source j)` combination; row `i·k + j`.
pub fn swap_grid(decoder: &Network, s: &Tensor, z: &Tensor) -> Result<Tensor> {
    check_pair(decoder, s, z)?;
    let k = s.rows();
    let rows: Vec<Vec<f64>> = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| join(s.row(i), z.row(j)))
        .collect();
    decoder.predict(&Tensor::from_rows(&rows)?)
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect()
}

/// `steps × steps` grid; row `i·steps + j` decodes S interpolated at
/// `α_i` and Z at `α_j`, with `α` evenly spaced over `[0, 1]`.
pub fn interpolate(
    decoder: &Network,
    (s1, z1): (&[f64], &[f64]),
    (s2, z2): (&[f64], &[f64]),
    steps: usize,
) -> Result<Tensor> {
    if steps < 2 {
        return Err(Error::invalid("interpolation needs at least two steps"));
    }
    if s1.len() != s2.len() || z1.len() != z2.len() || s1.len() + z1.len() != decoder.input_width() {
        return Err(Error::shape(
            "interpolate",
            &[s1.len(), z1.len()],
            &[s2.len(), z2.len()],
        ));
    }
    let alpha = |i: usize| i as f64 / (steps - 1) as f64;
    let mut rows = Vec::with_capacity(steps * steps);
    for i in 0..steps {
        let s = lerp(s1, s2, alpha(i));
        for j in 0..steps {
            rows.push(join(&s, &lerp(z1, z2, alpha(j))));
        }
    }
    decoder.predict(&Tensor::from_rows(&rows)?)
}

/// The `k` nearest rows to row `query` by Euclidean distance, query
/// excluded, ties broken by lower index.
pub fn retrieve(codes: &Tensor, query: usize, k: usize) -> Result<Vec<usize>> {
    let n = codes.rows();
    if query >= n {
        return Err(Error::invalid(format!("query {query} out of range for {n} codes")));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k must be in 1..{n}, got {k}")));
    }
    let q = codes.row(query);
    let mut d: Vec<(f64, usize)> = (0..n)
        .filter(|&i| i != query)
        .map(|i| {
            let dist: f64 = codes.row(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            (dist, i)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(d.into_iter().take(k).map(|(_, i)| i).collect())
}

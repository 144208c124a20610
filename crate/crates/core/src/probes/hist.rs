use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistBin {
    pub component: usize,
    pub group: usize,
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

/// Per-component histograms of `codes`, split by `groups` (latent value
/// per sample). Bins span each component's overall range; a constant
/// component puts everything in its first bin.
pub fn z_histograms(codes: &Tensor, groups: &[usize], bins: usize) -> Result<Vec<HistBin>> {
    if codes.rows() != groups.len() {
        return Err(Error::invalid("codes and groups are not aligned"));
    }
    if bins == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    let n_groups = groups.iter().max().map_or(0, |m| m + 1);
    let mut out = Vec::new();
    for c in 0..codes.cols() {
        let col: Vec<f64> = (0..codes.rows()).map(|i| codes.row(i)[c]).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![vec![0usize; bins]; n_groups];
        for (v, &g) in col.iter().zip(groups) {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[g][b] += 1;
        }
        for (g, row) in counts.iter().enumerate() {
            for (b, &count) in row.iter().enumerate() {
                out.push(HistBin {
                    component: c,
                    group: g,
                    bin_left: lo + b as f64 * width,
                    bin_right: lo + (b + 1) as f64 * width,
                    count,
                });
            }
        }
    }
    Ok(out)
}

/// `component,group,bin_left,bin_right,count`.
pub fn write_histograms_csv(bins: &[HistBin], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "component,group,bin_left,bin_right,count")?;
    for b in bins {
        writeln!(w, "{},{},{},{},{}", b.component, b.group, b.bin_left, b.bin_right, b.count)?;
    }
    w.flush()?;
    Ok(())
}

/// Components on which every pair of groups occupies disjoint intervals
/// and the smallest gap between neighbouring groups exceeds the widest
/// within-group range.
pub fn separating_components(codes: &Tensor, groups: &[usize]) -> Result<Vec<usize>> {
    if codes.rows() != groups.len() {
        return Err(Error::invalid("codes and groups are not aligned"));
    }
    let n_groups = groups.iter().max().map_or(0, |m| m + 1);
    let mut out = Vec::new();
    for c in 0..codes.cols() {
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); n_groups];
        for (i, &g) in groups.iter().enumerate() {
            let v = codes.row(i)[c];
            ranges[g].0 = ranges[g].0.min(v);
            ranges[g].1 = ranges[g].1.max(v);
        }
        let mut ranges: Vec<_> = ranges.into_iter().filter(|r| r.0 <= r.1).collect();
        if ranges.len() < 2 {
            continue;
        }
        ranges.sort_by(|a, b| a.0.total_cmp(&b.0));
        let within = ranges.iter().map(|r| r.1 - r.0).fold(0.0, f64::max);
        let gap = ranges
            .windows(2)
            .map(|w| w[1].0 - w[0].1)
            .fold(f64::INFINITY, f64::min);
        if gap > within {
            out.push(c);
        }
    }
    Ok(out)
}

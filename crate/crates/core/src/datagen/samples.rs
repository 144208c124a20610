use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-sample side information stored as a numeric table: latent factors
/// for the synthetic images, asset / period / β for market panels.
#[derive(Debug, Clone, PartialEq)]
pub struct Meta {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Meta {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(Error::invalid(format!(
                "meta row {i} has {} values for {} columns",
                rows[i].len(),
                columns.len()
            )));
        }
        Ok(Self { columns, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::invalid(format!("meta has no column `{name}`")))
    }

    /// One column as a vector.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self {
            columns: self.columns.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

/// Labelled inputs: `x` is `n × d`, `y` holds class ids in `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    x: Tensor,
    y: Vec<usize>,
    n_classes: usize,
    meta: Option<Meta>,
}

impl SampleSet {
    pub fn new(x: Tensor, y: Vec<usize>, n_classes: usize, meta: Option<Meta>) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() != y.len() {
            return Err(Error::invalid(format!(
                "{} labels for inputs of shape {:?}",
                y.len(),
                x.shape()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside 0..{n_classes}"
            )));
        }
        if let Some(m) = &meta {
            if m.rows.len() != y.len() {
                return Err(Error::invalid(format!(
                    "{} meta records for {} samples",
                    m.rows.len(),
                    y.len()
                )));
            }
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("sample inputs".into()));
        }
        Ok(Self {
            x,
            y,
            n_classes,
            meta,
        })
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn meta(&self) -> Option<&Meta> {
        self.meta.as_ref()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.x.cols()
    }

    /// Samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            n_classes: self.n_classes,
            meta: self.meta.as_ref().map(|m| m.select(idx)),
        }
    }

    /// Same inputs and meta under different labels.
    pub fn relabel(&self, y: Vec<usize>, n_classes: usize) -> Result<Self> {
        Self::new(self.x.clone(), y, n_classes, self.meta.clone())
    }

    /// `n` rows drawn uniformly with replacement.
    pub fn resample(&self, n: usize, seed: u64) -> Result<Self> {
        if self.is_empty() {
            return Err(Error::invalid("cannot resample an empty sample set"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.len())).collect();
        Ok(self.select(&idx))
    }

    /// Writes `sample_id,label,x_0..x_{d-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["sample_id".to_string(), "label".to_string()];
        header.extend((0..self.width()).map(|j| format!("x_{j}")));
        w.write_record(&header)?;
        for (i, &label) in self.y.iter().enumerate() {
            let mut rec = vec![i.to_string(), label.to_string()];
            rec.extend(self.x.row(i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `sample_id,<meta columns>`; no-op without meta.
    pub fn write_meta_csv(&self, path: &Path) -> Result<()> {
        let Some(meta) = &self.meta else {
            return Ok(());
        };
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["sample_id".to_string()];
        header.extend(meta.columns.iter().cloned());
        w.write_record(&header)?;
        for (i, row) in meta.rows.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`SampleSet::write_csv`], plus an optional meta
    /// file. `n_classes` defaults to one more than the largest label.
    pub fn read_csv(path: &Path, meta_path: Option<&Path>, n_classes: Option<usize>) -> Result<Self> {
        let (header, rows) = read_table(path)?;
        if header.len() < 2 || header[0] != "sample_id" || header[1] != "label" {
            return Err(parse_err(path, 1, "header must start with `sample_id,label`"));
        }
        let width = header.len() - 2;
        let mut y = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * width);
        for (line, rec) in &rows {
            let label = rec[1]
                .parse::<usize>()
                .map_err(|e| parse_err(path, *line, format!("label `{}`: {e}", rec[1])))?;
            y.push(label);
            for field in &rec[2..] {
                data.push(parse_f64(path, *line, field)?);
            }
        }
        let x = Tensor::new(vec![y.len(), width], data)?;
        let meta = match meta_path {
            Some(mp) => {
                let (header, rows) = read_table(mp)?;
                let mut out = Vec::with_capacity(rows.len());
                for (line, rec) in &rows {
                    out.push(
                        rec[1..]
                            .iter()
                            .map(|f| parse_f64(mp, *line, f))
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
                Some(Meta::new(header[1..].to_vec(), out)?)
            }
            None => None,
        };
        let n_classes = n_classes.unwrap_or_else(|| y.iter().max().map_or(0, |m| m + 1));
        Self::new(x, y, n_classes, meta)
    }
}

/// Adds i.i.d. `N(0, sigma²)` noise to every input entry.
pub fn augment_noise(samples: &SampleSet, sigma: f64, seed: u64) -> Result<SampleSet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut out = samples.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.x.data_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

pub(crate) fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

pub(crate) fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    match field.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(parse_err(path, line, format!("non-finite value `{v}`"))),
        Err(e) => Err(parse_err(path, line, format!("`{field}`: {e}"))),
    }
}

/// Header plus `(line number, fields)` for every record.
pub(crate) fn read_table(path: &Path) -> Result<(Vec<String>, Vec<(usize, Vec<String>)>)> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok((header, rows))
}

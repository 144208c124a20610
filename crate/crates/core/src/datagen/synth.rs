use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::samples::{Meta, SampleSet};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Number of rectangle positions (classes).
pub const POSITIONS: usize = 10;
pub const BLACK: f64 = 0.0;
pub const WHITE: f64 = 1.0;
pub const GRAY: f64 = 0.5;

/// Rectangle placement inside a square `side × side` image.
///
/// Position `i` covers rows `top(i) .. top(i) + height`; positions are
/// stacked without overlap and a one-row margin is left at the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RectGeometry {
    pub side: usize,
    pub height: usize,
    pub left: usize,
    pub width: usize,
}

impl RectGeometry {
    pub fn new(side: usize) -> Result<Self> {
        if side < 20 {
            return Err(Error::invalid(format!(
                "image side {side} too small: {POSITIONS} disjoint rectangle positions need at least 20 rows"
            )));
        }
        let height = (side - 2) / POSITIONS;
        let width = side * 5 / 8;
        Ok(Self {
            side,
            height,
            left: (side - width) / 2,
            width,
        })
    }

    pub fn top(&self, position: usize) -> usize {
        1 + self.height * position
    }

    pub fn pixels(&self) -> usize {
        self.side * self.side
    }

    fn covers(&self, position: usize, row: usize, col: usize) -> bool {
        let top = self.top(position);
        (top..top + self.height).contains(&row) && (self.left..self.left + self.width).contains(&col)
    }

    /// Renders one image; `background(row)` gives the backdrop of each row.
    pub fn render(&self, position: usize, background: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut img = Vec::with_capacity(self.pixels());
        for r in 0..self.side {
            for c in 0..self.side {
                img.push(if self.covers(position, r, c) {
                    GRAY
                } else {
                    background(r)
                });
            }
        }
        img
    }

    /// Reads the rectangle position back from pixels: the position whose
    /// rows hold the most gray-ish pixels in the rectangle's columns.
    pub fn decode_position(&self, img: &[f64]) -> usize {
        (0..POSITIONS)
            .map(|p| {
                let score: f64 = (self.top(p)..self.top(p) + self.height)
                    .flat_map(|r| (self.left..self.left + self.width).map(move |c| (r, c)))
                    .map(|(r, c)| 1.0 - 2.0 * (img[r * self.side + c] - GRAY).abs())
                    .sum();
                (p, score)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map_or(0, |(p, _)| p)
    }

    /// Thresholded background colour of a half of the image, read from the
    /// columns left of the rectangle.
    pub fn decode_background(&self, img: &[f64], rows: std::ops::Range<usize>) -> f64 {
        let mut sum = 0.0;
        let mut n = 0.0;
        for r in rows {
            for c in 0..self.left {
                sum += img[r * self.side + c];
                n += 1.0;
            }
        }
        if sum / n >= 0.5 {
            WHITE
        } else {
            BLACK
        }
    }
}

/// All 20 Synth1 images: 10 rectangle positions × black / white background.
/// Labels are positions; meta column `background` holds 0 (black) or 1.
pub fn gen_synth1(side: usize, seed: u64) -> Result<SampleSet> {
    let geo = RectGeometry::new(side)?;
    let mut items = Vec::new();
    for pos in 0..POSITIONS {
        for bg in [BLACK, WHITE] {
            items.push((geo.render(pos, |_| bg), pos, vec![bg]));
        }
    }
    assemble(geo, items, vec!["background".into()], seed)
}

/// All 40 Synth2 images: upper and lower halves each black or white.
/// Meta columns `upper` and `lower` hold the two background bits.
pub fn gen_synth2(side: usize, seed: u64) -> Result<SampleSet> {
    let geo = RectGeometry::new(side)?;
    let half = side / 2;
    let mut items = Vec::new();
    for pos in 0..POSITIONS {
        for upper in [BLACK, WHITE] {
            for lower in [BLACK, WHITE] {
                let img = geo.render(pos, |r| if r < half { upper } else { lower });
                items.push((img, pos, vec![upper, lower]));
            }
        }
    }
    assemble(geo, items, vec!["upper".into(), "lower".into()], seed)
}

fn assemble(
    geo: RectGeometry,
    mut items: Vec<(Vec<f64>, usize, Vec<f64>)>,
    columns: Vec<String>,
    seed: u64,
) -> Result<SampleSet> {
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = items.len();
    let mut data = Vec::with_capacity(n * geo.pixels());
    let mut y = Vec::with_capacity(n);
    let mut meta = Vec::with_capacity(n);
    for (img, pos, latent) in items {
        data.extend(img);
        y.push(pos);
        meta.push(latent);
    }
    let x = Tensor::new(vec![n, geo.pixels()], data)?;
    SampleSet::new(x, y, POSITIONS, Some(Meta::new(columns, meta)?))
}

/// Combined latent id per sample: the background bits read as a binary
/// number (Synth1: 0..2, Synth2: 0..4).
pub fn latent_ids(set: &SampleSet) -> Result<Vec<usize>> {
    let meta = set
        .meta()
        .ok_or_else(|| Error::invalid("sample set has no latent meta"))?;
    Ok(meta
        .rows
        .iter()
        .map(|r| r.iter().fold(0, |acc, &b| acc * 2 + usize::from(b >= 0.5)))
        .collect())
}

//! Heatmaps and the spatial-mean landmark estimator.
//!
//! Pixel coordinates are zero-based: `(0, 0)` is the centre of the top-left
//! pixel, `x` runs along a row and `y` down the columns. Values are stored
//! row-major.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

pub const DEFAULT_SIZE: usize = 64;
pub const DEFAULT_PROXY_SIGMA: f64 = 1.0;
/// Temperature knob for [`SigmaKind::TemperatureSoftmax`] when none is given.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// Rectangular grid of responses for one landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

/// Pixel post-processing applied before taking the weighted mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaKind {
    Relu,
    Softmax,
    TemperatureSoftmax(f64),
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width < 1 || height < 1 {
            return Err(Error::InvalidDimensions { width, height });
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} heatmap",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("heatmap values must be finite".into()));
        }
        Ok(Heatmap { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Heatmap::new(width, height, vec![0.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        assert!(v.is_finite(), "heatmap values must be finite");
        self.values[y * self.width + x] = v;
    }

    /// Pixel-centre coordinates of the row-major index `i`.
    pub fn coord(&self, i: usize) -> Point2 {
        Point2::new((i % self.width) as f64, (i / self.width) as f64)
    }

    /// Read a heatmap from a headerless CSV grid, one line per row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut values = Vec::new();
        let mut width = 0;
        let mut height = 0;
        for record in rdr.records() {
            let record = record?;
            if height == 0 {
                width = record.len();
            } else if record.len() != width {
                return Err(Error::DimensionMismatch(format!(
                    "row {height} has {} columns, expected {width}",
                    record.len()
                )));
            }
            for field in record.iter() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::InvalidArgument(format!("row {height}: '{field}' is not a number"))
                })?;
                values.push(v);
            }
            height += 1;
        }
        Heatmap::new(width, height, values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for row in self.values.chunks(self.width) {
            wtr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Unnormalised isotropic Gaussian bump with peak 1 at `center`.
pub fn render_gaussian(center: Point2, s: f64, width: usize, height: usize) -> Result<Heatmap> {
    if width < 1 || height < 1 {
        return Err(Error::InvalidDimensions { width, height });
    }
    if !(s > 0.0 && s.is_finite()) || !center.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid proxy Gaussian (s = {s})")));
    }
    let inv = 1.0 / (2.0 * s * s);
    let values = (0..width * height)
        .map(|i| {
            let dx = (i % width) as f64 - center.x;
            let dy = (i / width) as f64 - center.y;
            (-(dx * dx + dy * dy) * inv).exp()
        })
        .collect();
    Heatmap::new(width, height, values)
}

/// Per-pixel weights `σ(H)` and, for the softmax variants, `∂σ/∂H` as a
/// multiple of the weight (`1/τ`). ReLU ignores the second value.
fn weights(h: &Heatmap, sigma: SigmaKind) -> Result<(Vec<f64>, f64)> {
    match sigma {
        SigmaKind::Relu => {
            let w: Vec<f64> = h.values.iter().map(|&v| v.max(0.0)).collect();
            if w.iter().all(|&v| v <= 0.0) {
                return Err(Error::AllNonPositive);
            }
            Ok((w, 1.0))
        }
        SigmaKind::Softmax => Ok((softmax_weights(&h.values, 1.0), 1.0)),
        SigmaKind::TemperatureSoftmax(tau) => {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
            }
            Ok((softmax_weights(&h.values, tau), 1.0 / tau))
        }
    }
}

fn softmax_weights(values: &[f64], tau: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().map(|&v| ((v - max) / tau).exp()).collect()
}

fn weighted_mean(h: &Heatmap, w: &[f64]) -> (Point2, f64) {
    let mut total = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        if wi != 0.0 {
            let p = h.coord(i);
            total += wi;
            sx += wi * p.x;
            sy += wi * p.y;
        }
    }
    (Point2::new(sx / total, sy / total), total)
}

/// `μ = Σ σ(H)·(x, y) / Σ σ(H)`.
pub fn spatial_mean(h: &Heatmap, sigma: SigmaKind) -> Result<Point2> {
    let (w, _) = weights(h, sigma)?;
    Ok(weighted_mean(h, &w).0)
}

/// `∂μ/∂H(x, y)` for every pixel, row-major.
pub fn spatial_mean_grad(h: &Heatmap, sigma: SigmaKind) -> Result<Vec<Point2>> {
    let (w, dscale) = weights(h, sigma)?;
    let (mu, total) = weighted_mean(h, &w);
    Ok(w.iter()
        .enumerate()
        .map(|(i, &wi)| {
            let dsigma = match sigma {
                SigmaKind::Relu => 1.0,
                _ => wi * dscale,
            };
            if wi == 0.0 {
                Point2::ZERO
            } else {
                (h.coord(i) - mu).scale(dsigma / total)
            }
        })
        .collect())
}

/// Argmax pixel nudged 0.25 px toward the second-highest pixel.
///
/// Ties are broken by row-major scan order (first wins). A single-pixel
/// heatmap returns that pixel unshifted.
pub fn argmax_quarter_offset(h: &Heatmap) -> Point2 {
    let mut best = 0;
    for (i, &v) in h.values.iter().enumerate() {
        if v > h.values[best] {
            best = i;
        }
    }
    let second = h
        .values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .fold(None::<(usize, f64)>, |acc, (i, &v)| match acc {
            Some((_, bv)) if v <= bv => acc,
            _ => Some((i, v)),
        });
    let peak = h.coord(best);
    match second {
        Some((j, _)) => {
            let dir = h.coord(j) - peak;
            peak + dir.scale(0.25 / dir.norm())
        }
        None => peak,
    }
}

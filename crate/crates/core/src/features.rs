//! Skewed rectangular binning of persistence diagrams.
//!
//! Diagram points `(b, d)` are first mapped to `(b, d - b)`. Lifetimes are
//! split into `rows` bands: row 0 collects everything above `beta`, rows
//! `1..rows-1` tile `(0, beta]` top-down in steps of `beta / (rows - 1)`, and
//! the last row is closed at zero so zero-persistence points are counted.
//! Births are split into `cols` bands: column 0 is `(-inf, alpha0]`, the last
//! column is `(alpha1, inf)`, and the columns between tile `(alpha0, alpha1]`.
//! Every point therefore lands in exactly one bin.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persistence::PersistenceDiagram;
use crate::trajectory::SignalKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningParams {
    /// Vertical (lifetime) resolution.
    pub rows: usize,
    /// Horizontal (birth) resolution.
    pub cols: usize,
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta: f64,
}

impl BinningParams {
    pub fn new(rows: usize, cols: usize, alpha0: f64, alpha1: f64, beta: f64) -> Result<Self> {
        let params = Self {
            rows,
            cols,
            alpha0,
            alpha1,
            beta,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 4 || self.cols < 4 {
            return Err(Error::config(format!(
                "bin resolution must be at least 4x4, got {}x{}",
                self.rows, self.cols
            )));
        }
        let finite = self.alpha0.is_finite() && self.alpha1.is_finite() && self.beta.is_finite();
        if !finite || !(self.alpha0 > 0.0) || !(self.alpha1 > self.alpha0) || !(self.beta > 0.0) {
            return Err(Error::config(format!(
                "binning needs alpha1 > alpha0 > 0 and beta > 0, got alpha0={}, alpha1={}, beta={}",
                self.alpha0, self.alpha1, self.beta
            )));
        }
        Ok(())
    }

    /// Height of an interior lifetime band.
    pub fn lifetime_step(&self) -> f64 {
        self.beta / (self.rows - 1) as f64
    }

    /// Width of an interior birth band.
    pub fn birth_step(&self) -> f64 {
        (self.alpha1 - self.alpha0) / (self.cols - 2) as f64
    }

    /// Zero-based row of a lifetime.
    pub fn row_of(&self, lifetime: f64) -> usize {
        if lifetime > self.beta {
            return 0;
        }
        let step = self.lifetime_step();
        let bands = self.rows - 1;
        // k-th band from the bottom covers ((k-1) step, k step], k = 1 also takes 0
        let mut k = ((lifetime / step).ceil() as usize).clamp(1, bands);
        while k > 1 && lifetime <= (k - 1) as f64 * step {
            k -= 1;
        }
        while k < bands && lifetime > k as f64 * step {
            k += 1;
        }
        self.rows - k
    }

    /// Zero-based column of a birth value.
    pub fn col_of(&self, birth: f64) -> usize {
        if birth <= self.alpha0 {
            return 0;
        }
        if birth > self.alpha1 {
            return self.cols - 1;
        }
        let step = self.birth_step();
        let bands = self.cols - 2;
        let offset = birth - self.alpha0;
        let mut k = ((offset / step).ceil() as usize).clamp(1, bands);
        while k > 1 && offset <= (k - 1) as f64 * step {
            k -= 1;
        }
        while k < bands && offset > k as f64 * step {
            k += 1;
        }
        k
    }

    /// Params from training diagrams: births at the 5th / 95th percentiles and
    /// `beta` at the 95th percentile of positive lifetimes.
    pub fn from_quantiles<'a>(
        rows: usize,
        cols: usize,
        diagrams: impl IntoIterator<Item = &'a PersistenceDiagram>,
    ) -> Result<Self> {
        let mut births = Vec::new();
        let mut lifetimes = Vec::new();
        for d in diagrams {
            for &(b, dd) in &d.pairs {
                births.push(b);
                if dd > b {
                    lifetimes.push(dd - b);
                }
            }
        }
        if births.is_empty() {
            return Err(Error::insufficient(
                "no diagram points to derive binning from",
            ));
        }
        births.sort_by(f64::total_cmp);
        lifetimes.sort_by(f64::total_cmp);
        const FLOOR: f64 = 1e-6;
        let alpha0 = quantile(&births, 0.05).max(FLOOR);
        let mut alpha1 = quantile(&births, 0.95);
        if !(alpha1 > alpha0) {
            alpha1 = alpha0 + alpha0.abs().max(1.0);
        }
        let mut beta = if lifetimes.is_empty() {
            0.0
        } else {
            quantile(&lifetimes, 0.95)
        };
        if !(beta > FLOOR) {
            beta = 1.0;
        }
        BinningParams::new(rows, cols, alpha0, alpha1, beta)
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Integer histogram of a skewed diagram, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedFeature {
    pub counts: Vec<u32>,
    pub params: BinningParams,
    pub sources: Vec<SignalKind>,
}

impl BinnedFeature {
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.counts[row * self.params.cols + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Writes the matrix as CSV, one line per lifetime row (top row first).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.counts.chunks(self.params.cols) {
            let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// `(b, d) -> (b, d - b)`.
pub fn skew_transform(diagram: &PersistenceDiagram) -> Vec<(f64, f64)> {
    diagram.pairs.iter().map(|&(b, d)| (b, d - b)).collect()
}

pub fn bin_diagram(skewed: &[(f64, f64)], params: &BinningParams) -> Result<BinnedFeature> {
    bin_diagram_from(skewed, params, Vec::new())
}

pub fn bin_diagram_from(
    skewed: &[(f64, f64)],
    params: &BinningParams,
    sources: Vec<SignalKind>,
) -> Result<BinnedFeature> {
    params.validate()?;
    let mut counts = vec![0u32; params.rows * params.cols];
    for &(birth, lifetime) in skewed {
        let idx = params.row_of(lifetime) * params.cols + params.col_of(birth);
        counts[idx] += 1;
    }
    Ok(BinnedFeature {
        counts,
        params: *params,
        sources,
    })
}

/// Row-major flattening, concatenated in the given order.
pub fn feature_vector(features: &[BinnedFeature]) -> Vec<u32> {
    features
        .iter()
        .flat_map(|f| f.counts.iter().copied())
        .collect()
}

/// Feature vector checked against the dimensions a model expects.
pub fn feature_vector_for(
    features: &[BinnedFeature],
    expected: &[BinningParams],
) -> Result<Vec<u32>> {
    if features.len() != expected.len() {
        return Err(Error::config(format!(
            "expected {} binned signals, got {}",
            expected.len(),
            features.len()
        )));
    }
    for (f, p) in features.iter().zip(expected) {
        if f.params.rows != p.rows || f.params.cols != p.cols {
            return Err(Error::config(format!(
                "binning dimensions {}x{} do not match model {}x{}",
                f.params.rows, f.params.cols, p.rows, p.cols
            )));
        }
    }
    Ok(feature_vector(features))
}

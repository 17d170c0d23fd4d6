//! Per-point predictive summaries shared by every method, and the evaluation grids.

use std::path::Path;

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Two-sided 95% normal quantile used for all bands.
pub const Z95: f64 = 1.96;

/// Mean, standard deviation and `mean ∓ 1.96·std` band at each grid input,
/// all in original (de-standardized) units.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveGrid {
    pub inputs: DenseMatrix,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub method: String,
}

impl PredictiveGrid {
    pub fn new(inputs: DenseMatrix, mean: Vec<f64>, std: Vec<f64>, method: impl Into<String>) -> Result<Self> {
        let n = inputs.rows();
        if mean.len() != n || std.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "grid has {n} inputs, {} means, {} stds",
                mean.len(),
                std.len()
            )));
        }
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictive summary".into()));
        }
        if let Some(i) = std.iter().position(|s| *s < 0.0) {
            return Err(Error::NonFinite(format!("negative std at grid point {i}")));
        }
        let lower = mean.iter().zip(&std).map(|(m, s)| m - Z95 * s).collect();
        let upper = mean.iter().zip(&std).map(|(m, s)| m + Z95 * s).collect();
        Ok(Self {
            inputs,
            mean,
            std,
            lower,
            upper,
            method: method.into(),
        })
    }

    /// Maps a summary computed in standardized target units back to original units.
    pub fn from_standardized(
        inputs: DenseMatrix,
        mean: &[f64],
        std: &[f64],
        standardizer: &Standardizer,
        method: impl Into<String>,
    ) -> Result<Self> {
        let mean = standardizer.invert_targets(mean);
        let std = std.iter().map(|s| standardizer.invert_std(*s)).collect();
        Self::new(inputs, mean, std, method)
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.std.iter().map(|s| s * s).collect()
    }

    pub fn same_inputs(&self, other: &PredictiveGrid) -> bool {
        self.inputs == other.inputs
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        header.extend(["mean", "std", "lo95", "hi95"].map(String::from));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.inputs.row(i).iter().map(|v| v.to_string()).collect();
            for v in [self.mean[i], self.std[i], self.lower[i], self.upper[i]] {
                row.push(v.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, method: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let cols = headers.len();
        if cols < 5 || headers.iter().skip(cols - 4).collect::<Vec<_>>() != ["mean", "std", "lo95", "hi95"] {
            return Err(Error::Parse(format!("{}: not a predictive grid csv", path.display())));
        }
        let d = cols - 4;
        let (mut xs, mut mean, mut std) = (Vec::new(), Vec::new(), Vec::new());
        for record in r.records() {
            let record = record?;
            let vals: Vec<f64> = record
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number {s:?}"))))
                .collect::<Result<_>>()?;
            xs.extend_from_slice(&vals[..d]);
            mean.push(vals[d]);
            std.push(vals[d + 1]);
        }
        Self::new(DenseMatrix::from_vec(mean.len(), d, xs)?, mean, std, method)
    }
}

/// `n` evenly spaced points on `[lo, hi]`, endpoints included.
pub fn line_grid(lo: f64, hi: f64, n: usize) -> DenseMatrix {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    let xs: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    DenseMatrix::column(&xs)
}

/// `side × side` lattice over `[-h, h]²`, x varying fastest.
pub fn square_grid(half_width: f64, side: usize) -> DenseMatrix {
    let axis = line_grid(-half_width, half_width, side).into_vec();
    let mut data = Vec::with_capacity(2 * side * side);
    for y in &axis {
        for x in &axis {
            data.push(*x);
            data.push(*y);
        }
    }
    DenseMatrix::from_vec(side * side, 2, data).expect("finite grid")
}

/// Accumulates per-point population mean and variance over repeated
/// evaluations. Sums are taken relative to the first evaluation, so identical
/// evaluations give a variance of exactly zero.
#[derive(Debug, Clone)]
pub(crate) struct SampleMoments {
    shift: Vec<f64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: usize,
}

impl SampleMoments {
    pub fn new(len: usize) -> Self {
        Self {
            shift: Vec::new(),
            sum: vec![0.0; len],
            sum_sq: vec![0.0; len],
            count: 0,
        }
    }

    pub fn push(&mut self, values: &[f64]) {
        if self.count == 0 {
            self.shift = values.to_vec();
        }
        for ((s, q), (v, k)) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(values.iter().zip(&self.shift)) {
            let d = v - k;
            *s += d;
            *q += d * d;
        }
        self.count += 1;
    }

    /// `(mean, population variance)` per point.
    pub fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let t = self.count as f64;
        let mean = self.shift.iter().zip(&self.sum).map(|(k, s)| k + s / t).collect();
        let var = self
            .sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| ((q - s * s / t) / t).max(0.0))
            .collect();
        (mean, var)
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Affine map to zero-mean, unit-variance coordinates, fitted with
/// population (divide-by-n) statistics on the training set only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            input_mean: vec![0.0; dim],
            input_scale: vec![1.0; dim],
            target_mean: 0.0,
            target_scale: 1.0,
        }
    }

    /// Needs at least two rows. Dimension `d` in `DegenerateScale(d)` refers
    /// to input column `d`, or to the targets when `d == inputs.cols()`.
    pub fn fit(inputs: &DenseMatrix, targets: &[f64]) -> Result<Self> {
        let n = inputs.rows();
        if n != targets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{n} inputs but {} targets",
                targets.len()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidConfig(format!(
                "standardizer needs at least 2 observations, got {n}"
            )));
        }
        let d = inputs.cols();
        let mut input_mean = Vec::with_capacity(d);
        let mut input_scale = Vec::with_capacity(d);
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|i| inputs[(i, j)]).collect();
            let (m, s) = mean_std(&col);
            if !(s > 0.0) {
                return Err(Error::DegenerateScale(j));
            }
            input_mean.push(m);
            input_scale.push(s);
        }
        let (target_mean, target_scale) = mean_std(targets);
        if !(target_scale > 0.0) {
            return Err(Error::DegenerateScale(d));
        }
        Ok(Self {
            input_mean,
            input_scale,
            target_mean,
            target_scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn apply_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_mean.iter().zip(&self.input_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_inputs(&self, inputs: &DenseMatrix) -> DenseMatrix {
        let mut out = inputs.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.input_mean[j]) / self.input_scale[j];
            }
        }
        out
    }

    pub fn invert_inputs(&self, inputs: &DenseMatrix) -> DenseMatrix {
        let mut out = inputs.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.input_scale[j] + self.input_mean[j];
            }
        }
        out
    }

    pub fn apply_targets(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.target_mean) / self.target_scale).collect()
    }

    pub fn invert_target(&self, y: f64) -> f64 {
        y * self.target_scale + self.target_mean
    }

    pub fn invert_targets(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| self.invert_target(*v)).collect()
    }

    /// A standard deviation in standardized target units, mapped back to original units.
    pub fn invert_std(&self, s: f64) -> f64 {
        s * self.target_scale
    }
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

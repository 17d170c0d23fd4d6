use crate::data::NoiseProfile;
use crate::error::{Error, Result};
use crate::harness::config::{Region, Regions};
use crate::predictive::PredictiveGrid;

/// One value per region; `None` where the region has no grid points.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegionValues {
    pub data: Option<f64>,
    pub gap: Option<f64>,
    pub extrapolation: Option<f64>,
}

impl RegionValues {
    pub fn get(&self, region: Region) -> Option<f64> {
        match region {
            Region::Data => self.data,
            Region::Gap => self.gap,
            Region::Extrapolation => self.extrapolation,
        }
    }

    fn set(&mut self, region: Region, value: Option<f64>) {
        match region {
            Region::Data => self.data = value,
            Region::Gap => self.gap = value,
            Region::Extrapolation => self.extrapolation = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Mean squared error of the predictive mean against the noiseless truth.
    pub mse: f64,
    pub mean_std: RegionValues,
    /// Gap-to-data ratio of mean predictive std.
    pub rho: f64,
    /// Fraction of points whose truth lies inside the 95% band.
    pub coverage: RegionValues,
    pub coverage_all: f64,
    /// Mean of `|predictive std − true noise std|` over the grid.
    pub mean_std_error: f64,
    pub abs_residual: RegionValues,
}

pub const MEAN_STD_ERROR_DEFINITION: &str =
    "mean_std_error = mean over grid points of |predictive std - true observation-noise std at that input|";

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn compute_metrics(grid: &PredictiveGrid, truth: &[f64], noise: &NoiseProfile, regions: &Regions) -> Result<Metrics> {
    if truth.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} truth values for {} grid points",
            truth.len(),
            grid.len()
        )));
    }
    if grid.dim() != regions.dim() {
        return Err(Error::RegionMismatch(format!(
            "{}-d regions for a {}-d grid",
            regions.dim(),
            grid.dim()
        )));
    }
    let n = grid.len();
    let mut std_by = [Vec::new(), Vec::new(), Vec::new()];
    let mut covered_by = [Vec::new(), Vec::new(), Vec::new()];
    let mut resid_by = [Vec::new(), Vec::new(), Vec::new()];
    let (mut sq, mut std_err) = (0.0, 0.0);
    for i in 0..n {
        let x = grid.inputs.row(i);
        let r = regions.classify(x) as usize;
        let err = grid.mean[i] - truth[i];
        sq += err * err;
        std_err += (grid.std[i] - noise.std_at(x)).abs();
        std_by[r].push(grid.std[i]);
        covered_by[r].push(f64::from(u8::from(grid.lower[i] <= truth[i] && truth[i] <= grid.upper[i])));
        resid_by[r].push(err.abs());
    }
    let mut mean_std = RegionValues::default();
    let mut coverage = RegionValues::default();
    let mut abs_residual = RegionValues::default();
    for region in Region::ALL {
        let r = region as usize;
        mean_std.set(region, mean(&std_by[r]));
        coverage.set(region, mean(&covered_by[r]));
        abs_residual.set(region, mean(&resid_by[r]));
    }
    let (gap, data) = match (mean_std.gap, mean_std.data) {
        (Some(g), Some(d)) => (g, d),
        _ => return Err(Error::RegionMismatch("grid has no points in the gap or data region".into())),
    };
    let covered: f64 = covered_by.iter().flatten().sum();
    Ok(Metrics {
        mse: sq / n as f64,
        mean_std,
        rho: gap / data,
        coverage,
        coverage_all: covered / n as f64,
        mean_std_error: std_err / n as f64,
        abs_residual,
    })
}

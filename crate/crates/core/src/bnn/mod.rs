//! Bayesian regression network: tanh hidden layers, independent normal priors
//! on every network parameter, a Gamma prior on the observation-noise
//! precision, and posterior draws from NUTS.
//!
//! The sampled vector is the flat network parameter vector (same layout as
//! [`MlpParams`]) followed by the log precision.

mod diagnostics;
mod nuts;

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use diagnostics::{effective_sample_size, split_rhat};
pub use nuts::{leapfrog, nuts_sample, DrawStats, DualAveraging, LogDensity, NutsConfig, NutsDraws, PhasePoint};

use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::mlp::{backward, forward, forward_cached, param_count, Activation, MlpParams};
use crate::predictive::{PredictiveGrid, SampleMoments};

pub const METHOD_TAG: &str = "bnn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnModel {
    pub sizes: Vec<usize>,
    pub prior_std: f64,
    pub noise_shape: f64,
    pub noise_rate: f64,
}

impl Default for BnnModel {
    fn default() -> Self {
        Self::new(1, 16)
    }
}

/// One coordinate of the sampled vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamName {
    Weight { layer: usize, from: usize, to: usize },
    Bias { layer: usize, unit: usize },
    LogPrecision,
}

impl std::fmt::Display for ParamName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamName::Weight { layer, from, to } => write!(f, "w{layer}[{from},{to}]"),
            ParamName::Bias { layer, unit } => write!(f, "b{layer}[{unit}]"),
            ParamName::LogPrecision => f.write_str("log_precision"),
        }
    }
}

impl BnnModel {
    /// `input_dim → hidden → hidden → 1`, N(0, 1) priors, Gamma(2, 1) on precision.
    pub fn new(input_dim: usize, hidden: usize) -> Self {
        Self {
            sizes: vec![input_dim, hidden, hidden, 1],
            prior_std: 1.0,
            noise_shape: 2.0,
            noise_rate: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) || *self.sizes.last().unwrap() != 1 {
            return Err(Error::InvalidConfig(format!("bad BNN layer sizes {:?}", self.sizes)));
        }
        if !(self.prior_std > 0.0 && self.noise_shape > 0.0 && self.noise_rate > 0.0) {
            return Err(Error::InvalidConfig("BNN prior parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn network_len(&self) -> usize {
        param_count(&self.sizes)
    }

    /// Network parameters plus the log precision.
    pub fn dim(&self) -> usize {
        self.network_len() + 1
    }

    pub fn layout(&self) -> Vec<ParamName> {
        let mut names = Vec::with_capacity(self.dim());
        for layer in 0..self.sizes.len() - 1 {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            for from in 0..fan_in {
                for to in 0..fan_out {
                    names.push(ParamName::Weight { layer, from, to });
                }
            }
            names.extend((0..fan_out).map(|unit| ParamName::Bias { layer, unit }));
        }
        names.push(ParamName::LogPrecision);
        names
    }

    pub fn index_of(&self, name: ParamName) -> Option<usize> {
        let mut offset = 0;
        for layer in 0..self.sizes.len() - 1 {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            match name {
                ParamName::Weight { layer: l, from, to } if l == layer => {
                    return (from < fan_in && to < fan_out).then_some(offset + from * fan_out + to);
                }
                ParamName::Bias { layer: l, unit } if l == layer => {
                    return (unit < fan_out).then_some(offset + fan_in * fan_out + unit);
                }
                _ => offset += (fan_in + 1) * fan_out,
            }
        }
        (name == ParamName::LogPrecision).then_some(offset)
    }

    pub fn network(&self, theta: &[f64]) -> Result<MlpParams> {
        MlpParams::from_values(&self.sizes, theta[..self.network_len()].to_vec())
    }

    /// Log joint density of `theta` and the standardized data, including the
    /// Jacobian of the log-precision transform, with its gradient.
    pub fn log_posterior(&self, theta: &[f64], x: &DenseMatrix, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "BNN has {} parameters, got {}",
                self.dim(),
                theta.len()
            )));
        }
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch(format!("{} inputs and {} targets", x.rows(), y.len())));
        }
        let w = self.network_len();
        let s = theta[w];
        let tau = s.exp();
        let var = self.prior_std * self.prior_std;
        let (a, b) = (self.noise_shape, self.noise_rate);

        let mut value = -0.5 * theta[..w].iter().map(|t| t * t).sum::<f64>() / var
            - w as f64 * (self.prior_std.ln() + 0.5 * (2.0 * PI).ln());
        value += a * b.ln() - libm::lgamma(a) + (a - 1.0) * s - b * tau;
        value += s;
        let mut grad_s = a - b * tau;

        let mut grad = if y.is_empty() {
            vec![0.0; w]
        } else {
            let params = self.network(theta)?;
            let (out, cache) = forward_cached(&params, Activation::Tanh, x, None)?;
            let resid: Vec<f64> = y.iter().zip(&out).map(|(t, f)| t - f).collect();
            let ss: f64 = resid.iter().map(|r| r * r).sum();
            let n = y.len() as f64;
            value += 0.5 * n * (s - (2.0 * PI).ln()) - 0.5 * tau * ss;
            grad_s += 0.5 * n - 0.5 * tau * ss;
            let d_out: Vec<f64> = resid.iter().map(|r| tau * r).collect();
            backward(&params, Activation::Tanh, &cache, &d_out, None)
        };
        for (g, t) in grad.iter_mut().zip(theta) {
            *g -= t / var;
        }
        grad.push(grad_s);

        if !value.is_finite() {
            return Err(Error::NonFinite("BNN log posterior".into()));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(i));
        }
        Ok((value, grad))
    }
}

/// The posterior of a model given standardized data, as a sampling target.
pub struct BnnPosterior<'a> {
    pub model: &'a BnnModel,
    pub x: DenseMatrix,
    pub y: Vec<f64>,
}

impl<'a> BnnPosterior<'a> {
    pub fn new(model: &'a BnnModel, dataset: &Dataset) -> Result<Self> {
        model.validate()?;
        if dataset.dim() != model.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "model takes {} inputs, dataset has {}",
                model.input_dim(),
                dataset.dim()
            )));
        }
        Ok(Self {
            model,
            x: dataset.standardized_inputs(),
            y: dataset.standardized_targets(),
        })
    }
}

impl LogDensity for BnnPosterior<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density_and_grad(&self, position: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.model.log_posterior(position, &self.x, &self.y)
    }
}

/// Posterior draws of the network parameters and noise precision.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub model: BnnModel,
    /// `S × D` network parameters, one draw per row.
    pub weights: DenseMatrix,
    /// Noise precision of each draw, in standardized target units.
    pub precision: Vec<f64>,
    pub stats: Vec<DrawStats>,
    pub step_sizes: Vec<f64>,
}

impl PosteriorSamples {
    pub fn from_draws(model: &BnnModel, draws: NutsDraws) -> Result<Self> {
        if draws.positions.cols() != model.dim() {
            return Err(Error::DimensionMismatch(format!(
                "draws have {} columns, model has {}",
                draws.positions.cols(),
                model.dim()
            )));
        }
        let w = model.network_len();
        let s = draws.len();
        let mut weights = Vec::with_capacity(s * w);
        let mut precision = Vec::with_capacity(s);
        for i in 0..s {
            let row = draws.positions.row(i);
            weights.extend_from_slice(&row[..w]);
            precision.push(row[w].exp());
        }
        Ok(Self {
            model: model.clone(),
            weights: DenseMatrix::from_vec(s, w, weights)?,
            precision,
            stats: draws.stats,
            step_sizes: draws.step_sizes,
        })
    }

    pub fn len(&self) -> usize {
        self.precision.len()
    }

    pub fn is_empty(&self) -> bool {
        self.precision.is_empty()
    }

    pub fn divergences(&self) -> usize {
        self.stats.iter().filter(|s| s.divergent).count()
    }

    pub fn mean_accept_stat(&self) -> f64 {
        self.stats.iter().map(|s| s.accept_stat).sum::<f64>() / self.len() as f64
    }

    pub fn network(&self, draw: usize) -> Result<MlpParams> {
        MlpParams::from_values(&self.model.sizes, self.weights.row(draw).to_vec())
    }

    /// Split R̂ of the log precision across chains.
    pub fn precision_rhat(&self) -> f64 {
        let chains = self.stats.iter().map(|s| s.chain + 1).max().unwrap_or(0);
        let mut per_chain = vec![Vec::new(); chains];
        for (p, s) in self.precision.iter().zip(&self.stats) {
            per_chain[s.chain].push(p.ln());
        }
        split_rhat(&per_chain)
    }

    /// One row per draw: sampler diagnostics, the precision, then every
    /// sampled coordinate named as in [`BnnModel::layout`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = ["chain", "accept_stat", "tree_depth", "n_leapfrog", "divergent", "log_density", "precision"]
            .map(String::from)
            .to_vec();
        header.extend(self.model.layout().iter().map(|n| n.to_string()));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let s = &self.stats[i];
            let mut row = vec![
                s.chain.to_string(),
                s.accept_stat.to_string(),
                s.tree_depth.to_string(),
                s.n_leapfrog.to_string(),
                u8::from(s.divergent).to_string(),
                s.log_density.to_string(),
                self.precision[i].to_string(),
            ];
            row.extend(self.weights.row(i).iter().map(|v| v.to_string()));
            row.push(self.precision[i].ln().to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads draws written by [`PosteriorSamples::write_csv`] for `model`.
    /// Step sizes are not stored and come back empty.
    pub fn read_csv(path: &Path, model: &BnnModel) -> Result<Self> {
        model.validate()?;
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let names: Vec<String> = model.layout().iter().map(|n| n.to_string()).collect();
        if headers.len() != 7 + names.len() || headers.iter().skip(7).zip(&names).any(|(h, n)| h != n) {
            return Err(Error::Parse(format!("{}: columns do not match the model layout", path.display())));
        }
        let bad = |s: &str| Error::Parse(format!("bad value {s:?} in {}", path.display()));
        let w = model.network_len();
        let (mut weights, mut precision, mut stats) = (Vec::new(), Vec::new(), Vec::new());
        for record in r.records() {
            let record = record?;
            let f = |i: usize| record[i].trim().parse::<f64>().map_err(|_| bad(&record[i]));
            let u = |i: usize| record[i].trim().parse::<usize>().map_err(|_| bad(&record[i]));
            stats.push(DrawStats {
                chain: u(0)?,
                accept_stat: f(1)?,
                tree_depth: u(2)?,
                n_leapfrog: u(3)?,
                divergent: u(4)? != 0,
                log_density: f(5)?,
            });
            precision.push(f(6)?);
            for i in 0..w {
                weights.push(f(7 + i)?);
            }
        }
        if precision.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Parse("non-positive precision draw".into()));
        }
        Ok(Self {
            model: model.clone(),
            weights: DenseMatrix::from_vec(precision.len(), w, weights)?,
            precision,
            stats,
            step_sizes: Vec::new(),
        })
    }
}

/// Samples the posterior of `model` given the dataset's standardized data.
pub fn sample_posterior(dataset: &Dataset, model: &BnnModel, config: &NutsConfig) -> Result<PosteriorSamples> {
    let target = BnnPosterior::new(model, dataset)?;
    let draws = nuts_sample(&target, config)?;
    PosteriorSamples::from_draws(model, draws)
}

/// Per grid point, the mean and std of the network output across draws, in
/// original units. With `include_noise`, each draw's noise variance `1/τ` is
/// added to the predictive variance.
pub fn bnn_predict(
    samples: &PosteriorSamples,
    grid: &DenseMatrix,
    standardizer: &Standardizer,
    include_noise: bool,
) -> Result<PredictiveGrid> {
    if samples.len() < 2 {
        return Err(Error::TooFewDraws(samples.len()));
    }
    if grid.cols() != samples.model.input_dim() {
        return Err(Error::GridMismatch);
    }
    let x = standardizer.apply_inputs(grid);
    let mut moments = SampleMoments::new(grid.rows());
    for s in 0..samples.len() {
        let out = forward(&samples.network(s)?, Activation::Tanh, &x, None)?;
        moments.push(&out);
    }
    let (mean, mut var) = moments.finish();
    if include_noise {
        let noise = samples.precision.iter().map(|p| 1.0 / p).sum::<f64>() / samples.len() as f64;
        var.iter_mut().for_each(|v| *v += noise);
    }
    let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    PredictiveGrid::from_standardized(grid.clone(), &mean, &std, standardizer, METHOD_TAG)
}

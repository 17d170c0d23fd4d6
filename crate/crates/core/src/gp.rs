//! Exact Gaussian-process regression with a zero mean, an isotropic RBF
//! kernel and Gaussian observation noise. Hyperparameters are fitted by Adam
//! on the negative log marginal likelihood in log space.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_inverse, cholesky_jittered, dot, gemm_nt, invert_lower, solve_cholesky, DenseMatrix,
};
use crate::optim::AdamState;
use crate::predictive::PredictiveGrid;

pub const METHOD_TAG: &str = "gp";

/// Kernel and noise hyperparameters in standardized units, stored as logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub log_lengthscale: f64,
    pub log_signal_variance: f64,
    pub log_noise_variance: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        Self::new(1.0, 1.0, 0.01)
    }
}

impl GpHyper {
    /// A zero noise variance is allowed and maps to a log of `-inf`.
    pub fn new(lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Self {
        Self {
            log_lengthscale: lengthscale.ln(),
            log_signal_variance: signal_variance.ln(),
            log_noise_variance: noise_variance.ln(),
        }
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    fn to_array(self) -> [f64; 3] {
        [self.log_lengthscale, self.log_signal_variance, self.log_noise_variance]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Self {
            log_lengthscale: a[0],
            log_signal_variance: a[1],
            log_noise_variance: a[2],
        }
    }
}

fn squared_distances(x1: &DenseMatrix, x2: &DenseMatrix) -> Result<DenseMatrix> {
    if x1.cols() != x2.cols() {
        return Err(Error::DimensionMismatch(format!(
            "kernel inputs have {} and {} columns",
            x1.cols(),
            x2.cols()
        )));
    }
    let mut d = DenseMatrix::zeros(x1.rows(), x2.rows());
    for i in 0..x1.rows() {
        let a = x1.row(i);
        for (j, v) in d.row_mut(i).iter_mut().enumerate() {
            *v = a.iter().zip(x2.row(j)).map(|(p, q)| (p - q) * (p - q)).sum();
        }
    }
    Ok(d)
}

/// `K[i, j] = σ_f²·exp(-‖x1_i - x2_j‖² / (2ℓ²))`.
pub fn rbf(x1: &DenseMatrix, x2: &DenseMatrix, hyper: &GpHyper) -> Result<DenseMatrix> {
    let mut k = squared_distances(x1, x2)?;
    let sf2 = hyper.signal_variance();
    let inv_2l2 = 0.5 / (hyper.lengthscale() * hyper.lengthscale());
    for v in k.as_mut_slice() {
        *v = sf2 * (-*v * inv_2l2).exp();
    }
    Ok(k)
}

/// Negative log marginal likelihood and its gradient with respect to
/// `(log ℓ, log σ_f², log σ_n²)`, evaluated on raw coordinates.
pub fn nlml_raw(hyper: &GpHyper, x: &DenseMatrix, y: &[f64]) -> Result<(f64, [f64; 3])> {
    let n = y.len();
    if n == 0 || x.rows() != n {
        return Err(Error::DimensionMismatch(format!("{} inputs and {n} targets", x.rows())));
    }
    let d2 = squared_distances(x, x)?;
    let sf2 = hyper.signal_variance();
    let sn2 = hyper.noise_variance();
    let l2 = hyper.lengthscale().powi(2);
    let mut kf = d2.clone();
    for v in kf.as_mut_slice() {
        *v = sf2 * (-*v / (2.0 * l2)).exp();
    }
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += sn2;
    }
    let chol = cholesky_jittered(&k)?;
    let l = &chol.factor;
    let alpha = solve_cholesky(l, y)?;
    let log_det_half: f64 = l.diag().iter().map(|d| d.ln()).sum();
    let value = 0.5 * dot(y, &alpha) + log_det_half + 0.5 * n as f64 * (2.0 * PI).ln();

    // dNLML/dθ = ½·tr((K⁻¹ - ααᵀ)·∂K/∂θ)
    let kinv = cholesky_inverse(l)?;
    let mut g = [0.0; 3];
    for i in 0..n {
        for j in 0..n {
            let w = kinv[(i, j)] - alpha[i] * alpha[j];
            let kij = kf[(i, j)];
            g[0] += w * kij * d2[(i, j)] / l2;
            g[1] += w * kij;
        }
        g[2] += (kinv[(i, i)] - alpha[i] * alpha[i]) * sn2;
    }
    for v in g.iter_mut() {
        *v *= 0.5;
    }
    if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("negative log marginal likelihood".into()));
    }
    Ok((value, g))
}

/// Negative log marginal likelihood on the dataset's standardized coordinates.
pub fn nlml(hyper: &GpHyper, dataset: &Dataset) -> Result<(f64, [f64; 3])> {
    nlml_raw(hyper, &dataset.standardized_inputs(), &dataset.standardized_targets())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpFitConfig {
    pub init: GpHyper,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            init: GpHyper::default(),
            steps: 500,
            learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpFit {
    /// Lowest-NLML point visited.
    pub hyper: GpHyper,
    pub nlml: f64,
    /// NLML at every visited point, starting with the initial one.
    pub trajectory: Vec<f64>,
}

pub fn fit_gp(dataset: &Dataset, init: GpHyper, steps: usize, learning_rate: f64) -> Result<GpFit> {
    fit_gp_raw(&dataset.standardized_inputs(), &dataset.standardized_targets(), init, steps, learning_rate)
}

pub fn fit_gp_raw(x: &DenseMatrix, y: &[f64], init: GpHyper, steps: usize, learning_rate: f64) -> Result<GpFit> {
    let mut theta = init.to_array();
    let mut adam = AdamState::new(3, learning_rate);
    let mut trajectory = Vec::with_capacity(steps + 1);
    let mut best = (f64::INFINITY, init);
    for step in 0..=steps {
        let hyper = GpHyper::from_array(theta);
        let (value, grad) = match nlml_raw(&hyper, x, y) {
            Ok(v) => v,
            Err(e) => {
                return Err(Error::FitFailed {
                    trajectory,
                    source: Box::new(e),
                })
            }
        };
        trajectory.push(value);
        if value < best.0 {
            best = (value, hyper);
        }
        if step < steps {
            adam.step(&mut theta, &grad)?;
        }
    }
    Ok(GpFit {
        hyper: best.1,
        nlml: best.0,
        trajectory,
    })
}

/// Conditioned GP: Cholesky factor of `K + σ_n²I` and `α = (K + σ_n²I)⁻¹y`.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub hyper: GpHyper,
    pub standardizer: Standardizer,
    train_x: DenseMatrix,
    factor: DenseMatrix,
    factor_inv: DenseMatrix,
    alpha: Vec<f64>,
}

impl GpPosterior {
    pub fn new(dataset: &Dataset, hyper: GpHyper) -> Result<Self> {
        Self::from_standardized(
            dataset.standardized_inputs(),
            &dataset.standardized_targets(),
            hyper,
            dataset.standardizer.clone(),
        )
    }

    pub fn from_standardized(x: DenseMatrix, y: &[f64], hyper: GpHyper, standardizer: Standardizer) -> Result<Self> {
        let mut k = rbf(&x, &x, &hyper)?;
        let sn2 = hyper.noise_variance();
        for i in 0..x.rows() {
            k[(i, i)] += sn2;
        }
        let factor = cholesky_jittered(&k)?.factor;
        let alpha = solve_cholesky(&factor, y)?;
        let factor_inv = invert_lower(&factor)?;
        Ok(Self {
            hyper,
            standardizer,
            train_x: x,
            factor,
            factor_inv,
            alpha,
        })
    }

    pub fn factor(&self) -> &DenseMatrix {
        &self.factor
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Predictive mean and latent variance at standardized inputs; with
    /// `include_noise` the observation noise variance is added.
    pub fn predict_standardized(&self, x: &DenseMatrix, include_noise: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.cols() != self.train_x.cols() {
            return Err(Error::GridMismatch);
        }
        let m = x.rows();
        let n = self.train_x.rows();
        let ks = rbf(x, &self.train_x, &self.hyper)?;
        let mean = ks.matvec(&self.alpha)?;
        // rows of V are (L⁻¹k*)ᵀ
        let mut v = vec![0.0; m * n];
        gemm_nt(m, n, n, ks.as_slice(), self.factor_inv.as_slice(), &mut v);
        let sf2 = self.hyper.signal_variance();
        let noise = if include_noise { self.hyper.noise_variance() } else { 0.0 };
        let var = (0..m)
            .map(|i| {
                let row = &v[i * n..(i + 1) * n];
                (sf2 - dot(row, row)).max(0.0) + noise
            })
            .collect();
        Ok((mean, var))
    }
}

/// Predictive grid in original units. The band is epistemic unless `include_noise`.
pub fn gp_predict(posterior: &GpPosterior, grid: &DenseMatrix, include_noise: bool) -> Result<PredictiveGrid> {
    let x = posterior.standardizer.apply_inputs(grid);
    let (mean, var) = posterior.predict_standardized(&x, include_noise)?;
    let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    PredictiveGrid::from_standardized(grid.clone(), &mean, &std, &posterior.standardizer, METHOD_TAG)
}

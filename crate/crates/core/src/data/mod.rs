//! Synthetic regression tasks: a 1D polynomial-plus-sine curve with a
//! training gap, and a 2D field whose centre is never observed.

mod io;
mod standardize;

pub use io::{read_dataset, sidecar_path, write_dataset};
pub use standardize::Standardizer;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::linalg::DenseMatrix;
use crate::rng::RandomStream;

/// Sampling range of the 1D inputs.
pub const DOMAIN_1D: (f64, f64) = (-1.3, 1.3);
/// Interval left out of 1D training data.
pub const GAP_1D: (f64, f64) = (-0.5, 0.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[serde(rename = "1d")]
    OneD,
    #[serde(rename = "2d")]
    TwoD,
}

impl Task {
    pub fn dim(self) -> usize {
        match self {
            Task::OneD => 1,
            Task::TwoD => 2,
        }
    }
}

/// `f(x) = sin(4x) + r0 + r1·x + (r2 + 1/2)·x²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec1D {
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
}

impl FunctionSpec1D {
    pub fn eval(&self, x: f64) -> f64 {
        (4.0 * x).sin() + self.r0 + self.r1 * x + (self.r2 + 0.5) * x * x
    }
}

pub fn sample_function_1d(stream: &mut RandomStream) -> FunctionSpec1D {
    FunctionSpec1D {
        r0: stream.normal(),
        r1: stream.normal(),
        r2: stream.normal(),
    }
}

pub fn eval_truth_1d(spec: &FunctionSpec1D, x: f64) -> f64 {
    spec.eval(x)
}

/// Smooth base field plus radial oscillations inside the hole plus a ring of
/// Gaussian bumps:
///
/// ```text
/// f(p) = A·sin(x)·cos(y)
///      + [r < R] · B·sin(k·r)·(1 - (r/R)²)²
///      + Σ_i C·exp(-‖p - c_i‖² / (2w²)),   c_i = ρ·(cos 2πi/m, sin 2πi/m)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec2D {
    pub half_width: f64,
    pub base_amplitude: f64,
    pub oscillation_wavenumber: f64,
    pub oscillation_amplitude: f64,
    pub hole_radius: f64,
    pub bead_ring_radius: f64,
    pub bead_count: usize,
    pub bead_width: f64,
    pub bead_amplitude: f64,
}

impl Default for FieldSpec2D {
    fn default() -> Self {
        Self {
            half_width: 3.0,
            base_amplitude: 1.0,
            oscillation_wavenumber: 12.0,
            oscillation_amplitude: 0.8,
            hole_radius: 1.0,
            bead_ring_radius: 2.0,
            bead_count: 8,
            bead_width: 0.15,
            bead_amplitude: 0.6,
        }
    }
}

impl FieldSpec2D {
    pub fn bead_center(&self, i: usize) -> (f64, f64) {
        let angle = 2.0 * PI * i as f64 / self.bead_count as f64;
        (self.bead_ring_radius * angle.cos(), self.bead_ring_radius * angle.sin())
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let base = self.base_amplitude * x.sin() * y.cos();
        let r = x.hypot(y);
        let oscillation = if r < self.hole_radius {
            let u = r / self.hole_radius;
            self.oscillation_amplitude * (self.oscillation_wavenumber * r).sin() * (1.0 - u * u).powi(2)
        } else {
            0.0
        };
        let two_w2 = 2.0 * self.bead_width * self.bead_width;
        let beads: f64 = (0..self.bead_count)
            .map(|i| {
                let (cx, cy) = self.bead_center(i);
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                self.bead_amplitude * (-d2 / two_w2).exp()
            })
            .sum();
        base + oscillation + beads
    }
}

pub fn eval_truth_2d(spec: &FieldSpec2D, point: (f64, f64)) -> f64 {
    spec.eval(point.0, point.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Constant,
    /// `σ(x) = σ_obs·sin(r)/r` with `r = ‖x‖` and `σ(0) = σ_obs`.
    SincScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub kind: NoiseKind,
    pub sigma: f64,
}

impl NoiseProfile {
    pub fn constant(sigma: f64) -> Self {
        Self {
            kind: NoiseKind::Constant,
            sigma,
        }
    }

    pub fn sinc_scaled(sigma: f64) -> Self {
        Self {
            kind: NoiseKind::SincScaled,
            sigma,
        }
    }

    /// Noise standard deviation at a point, in target units.
    pub fn std_at(&self, x: &[f64]) -> f64 {
        match self.kind {
            NoiseKind::Constant => self.sigma,
            NoiseKind::SincScaled => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r == 0.0 {
                    self.sigma
                } else {
                    self.sigma * r.sin() / r
                }
            }
        }
    }
}

/// The part of input space that training data never touches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Exclusion {
    None,
    Interval { lo: f64, hi: f64 },
    Disc { radius: f64 },
}

impl Exclusion {
    pub fn contains(&self, x: &[f64]) -> bool {
        match *self {
            Exclusion::None => false,
            Exclusion::Interval { lo, hi } => x[0] > lo && x[0] < hi,
            Exclusion::Disc { radius } => x.iter().map(|v| v * v).sum::<f64>().sqrt() < radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Truth {
    #[serde(rename = "1d")]
    OneD(FunctionSpec1D),
    #[serde(rename = "2d")]
    TwoD(FieldSpec2D),
}

impl Truth {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Truth::OneD(f) => f.eval(x[0]),
            Truth::TwoD(f) => f.eval(x[0], x[1]),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Truth::OneD(_) => 1,
            Truth::TwoD(_) => 2,
        }
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataRecipe {
    pub task: Task,
    pub n: usize,
    pub noise: NoiseProfile,
    /// 1D only: leave out the gap interval.
    pub gap: bool,
    pub seed: u64,
}

impl DataRecipe {
    pub fn one_d(n: usize, sigma: f64, seed: u64) -> Self {
        Self {
            task: Task::OneD,
            n,
            noise: NoiseProfile::constant(sigma),
            gap: true,
            seed,
        }
    }

    pub fn two_d(n: usize, sigma: f64, seed: u64) -> Self {
        Self {
            task: Task::TwoD,
            n,
            noise: NoiseProfile::constant(sigma),
            gap: true,
            seed,
        }
    }

    pub fn generate(&self) -> Dataset {
        let root = RandomStream::new(self.seed);
        let mut dataset = match self.task {
            Task::OneD => {
                let spec = sample_function_1d(&mut root.fork_named("function"));
                generate_1d(&spec, self.n, self.noise, self.gap, &mut root.fork_named("points"))
            }
            Task::TwoD => generate_2d(
                &FieldSpec2D::default(),
                self.n,
                self.noise,
                &mut root.fork_named("points"),
            ),
        };
        dataset.recipe = Some(*self);
        dataset
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// n×d, original units.
    pub inputs: DenseMatrix,
    /// Original units.
    pub targets: Vec<f64>,
    pub noise: NoiseProfile,
    pub exclusion: Exclusion,
    pub truth: Option<Truth>,
    pub standardizer: Standardizer,
    pub recipe: Option<DataRecipe>,
}

impl Dataset {
    /// Wraps raw observations, standardizing them when there are at least two
    /// rows with nonzero spread, otherwise using the identity map.
    pub fn from_observations(inputs: DenseMatrix, targets: Vec<f64>, noise: NoiseProfile) -> Self {
        let standardizer = Standardizer::fit(&inputs, &targets)
            .unwrap_or_else(|_| Standardizer::identity(inputs.cols()));
        Self {
            inputs,
            targets,
            noise,
            exclusion: Exclusion::None,
            truth: None,
            standardizer,
            recipe: None,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn standardized_inputs(&self) -> DenseMatrix {
        self.standardizer.apply_inputs(&self.inputs)
    }

    pub fn standardized_targets(&self) -> Vec<f64> {
        self.standardizer.apply_targets(&self.targets)
    }

    pub fn truth_values(&self) -> Option<Vec<f64>> {
        let truth = self.truth?;
        Some((0..self.len()).map(|i| truth.eval(self.inputs.row(i))).collect())
    }
}

fn finish(
    inputs: DenseMatrix,
    targets: Vec<f64>,
    noise: NoiseProfile,
    exclusion: Exclusion,
    truth: Truth,
) -> Dataset {
    let mut d = Dataset::from_observations(inputs, targets, noise);
    d.exclusion = exclusion;
    d.truth = Some(truth);
    d
}

/// Uniform inputs over the 1D domain (minus the gap when active) with targets
/// `f(x) + σ(x)·z`.
pub fn generate_1d(
    spec: &FunctionSpec1D,
    n: usize,
    noise: NoiseProfile,
    gap_active: bool,
    stream: &mut RandomStream,
) -> Dataset {
    let (lo, hi) = DOMAIN_1D;
    let (gap_lo, gap_hi) = GAP_1D;
    let left = gap_lo - lo;
    let right = hi - gap_hi;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = if gap_active {
            let u = stream.uniform() * (left + right);
            if u < left {
                lo + u
            } else {
                gap_hi + (u - left)
            }
        } else {
            stream.uniform_range(lo, hi)
        };
        let eps = stream.normal();
        xs.push(x);
        ys.push(spec.eval(x) + noise.std_at(&[x]) * eps);
    }
    let exclusion = if gap_active {
        Exclusion::Interval { lo: gap_lo, hi: gap_hi }
    } else {
        Exclusion::None
    };
    finish(DenseMatrix::column(&xs), ys, noise, exclusion, Truth::OneD(*spec))
}

/// Uniform inputs over the square domain minus the hole disc, by rejection.
pub fn generate_2d(spec: &FieldSpec2D, n: usize, noise: NoiseProfile, stream: &mut RandomStream) -> Dataset {
    let h = spec.half_width;
    let mut data = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(n);
    while ys.len() < n {
        let x = stream.uniform_range(-h, h);
        let y = stream.uniform_range(-h, h);
        if x.hypot(y) < spec.hole_radius {
            continue;
        }
        let eps = stream.normal();
        data.push(x);
        data.push(y);
        ys.push(spec.eval(x, y) + noise.std_at(&[x, y]) * eps);
    }
    let inputs = DenseMatrix::from_vec(n, 2, data).expect("finite by construction");
    let exclusion = Exclusion::Disc {
        radius: spec.hole_radius,
    };
    finish(inputs, ys, noise, exclusion, Truth::TwoD(*spec))
}

//! Flat key/value settings shared by every experiment, and the evaluation
//! regions used by the metrics.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bnn::{BnnModel, NutsConfig};
use crate::data::{Task, DOMAIN_1D};
use crate::error::{Error, Result};
use crate::gp::{GpFitConfig, GpHyper};
use crate::linalg::DenseMatrix;
use crate::mcd::{BatchPolicy, DropoutConfig, TrainConfig};
use crate::predictive::{line_grid, square_grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gp,
    Mcd,
    Bnn,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gp, Method::Mcd, Method::Bnn];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Gp => "gp",
            Method::Mcd => "mcd",
            Method::Bnn => "bnn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gp" => Ok(Method::Gp),
            "mcd" => Ok(Method::Mcd),
            "bnn" => Ok(Method::Bnn),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?} (expected gp, mcd or bnn)"))),
        }
    }
}

/// Every tunable value, one flat key each. Missing keys take the defaults
/// printed by `Settings::default().to_toml()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Base seed for model initialisation, dropout masks and sampling.
    pub seed: u64,
    /// Seed for training-data generation, fixed across model seeds.
    pub data_seed: u64,
    pub grid_points_1d: usize,
    pub grid_side_2d: usize,

    /// 1D: |x| below this is the gap region.
    pub region_gap_half_width: f64,
    /// 1D: |x| above this is the extrapolation region.
    pub region_data_outer: f64,
    /// 2D: points closer than this to the origin form the hole region.
    pub region_hole_radius: f64,

    pub gp_steps: usize,
    pub gp_learning_rate: f64,
    pub gp_init_lengthscale: f64,
    pub gp_init_signal_variance: f64,
    pub gp_init_noise_variance: f64,
    pub gp_include_noise: bool,

    pub mcd_hidden_1d: usize,
    pub mcd_hidden_2d: usize,
    pub mcd_dropout: f64,
    pub mcd_train_dropout: bool,
    pub mcd_learning_rate: f64,
    pub mcd_l2: f64,
    pub mcd_epochs: usize,
    /// 0 means full-batch training.
    pub mcd_batch_size: usize,
    pub mcd_passes: usize,

    pub bnn_hidden: usize,
    pub bnn_prior_std: f64,
    pub bnn_noise_shape: f64,
    pub bnn_noise_rate: f64,
    pub bnn_warmup: usize,
    pub bnn_samples: usize,
    pub bnn_target_accept: f64,
    pub bnn_max_depth: usize,
    pub bnn_chains: usize,
    pub bnn_init_radius: f64,
    pub bnn_include_noise: bool,
}

impl Default for Settings {
    fn default() -> Self {
        let gp = GpFitConfig::default();
        let mcd = TrainConfig::default();
        let dropout = DropoutConfig::default();
        let bnn = BnnModel::default();
        let nuts = NutsConfig::default();
        Self {
            seed: 0,
            data_seed: 0,
            grid_points_1d: 400,
            grid_side_2d: 100,
            region_gap_half_width: 0.5,
            region_data_outer: DOMAIN_1D.1,
            region_hole_radius: 1.0,
            gp_steps: gp.steps,
            gp_learning_rate: gp.learning_rate,
            gp_init_lengthscale: gp.init.lengthscale(),
            gp_init_signal_variance: gp.init.signal_variance(),
            gp_init_noise_variance: gp.init.noise_variance(),
            gp_include_noise: false,
            mcd_hidden_1d: 32,
            mcd_hidden_2d: 124,
            mcd_dropout: dropout.rate,
            mcd_train_dropout: dropout.apply_at_training,
            mcd_learning_rate: mcd.learning_rate,
            mcd_l2: mcd.l2,
            mcd_epochs: mcd.epochs,
            mcd_batch_size: 0,
            mcd_passes: 500,
            bnn_hidden: bnn.sizes[1],
            bnn_prior_std: bnn.prior_std,
            bnn_noise_shape: bnn.noise_shape,
            bnn_noise_rate: bnn.noise_rate,
            bnn_warmup: nuts.warmup,
            bnn_samples: nuts.samples,
            bnn_target_accept: nuts.target_accept,
            bnn_max_depth: nuts.max_depth,
            bnn_chains: nuts.chains,
            bnn_init_radius: nuts.init_radius,
            bnn_include_noise: false,
        }
    }
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Settings = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_points_1d < 2 || self.grid_side_2d < 2 {
            return Err(Error::InvalidConfig("grids need at least 2 points per axis".into()));
        }
        if !(self.region_gap_half_width >= 0.0 && self.region_data_outer > self.region_gap_half_width) {
            return Err(Error::InvalidConfig(
                "1D regions need 0 ≤ region_gap_half_width < region_data_outer".into(),
            ));
        }
        if !(self.region_hole_radius > 0.0) {
            return Err(Error::InvalidConfig("region_hole_radius must be positive".into()));
        }
        if !(self.gp_learning_rate > 0.0)
            || !(self.gp_init_lengthscale > 0.0 && self.gp_init_signal_variance > 0.0 && self.gp_init_noise_variance > 0.0)
        {
            return Err(Error::InvalidConfig("GP learning rate and initial hyperparameters must be positive".into()));
        }
        if self.mcd_hidden_1d == 0 || self.mcd_hidden_2d == 0 || self.bnn_hidden == 0 {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        if self.mcd_passes < 2 {
            return Err(Error::InvalidPassCount(self.mcd_passes));
        }
        self.dropout().validate()?;
        self.mcd_train(0).validate()?;
        self.bnn_model(1).validate()?;
        self.nuts(0).validate()
    }

    pub fn gp_fit(&self) -> GpFitConfig {
        GpFitConfig {
            init: GpHyper::new(
                self.gp_init_lengthscale,
                self.gp_init_signal_variance,
                self.gp_init_noise_variance,
            ),
            steps: self.gp_steps,
            learning_rate: self.gp_learning_rate,
        }
    }

    pub fn dropout(&self) -> DropoutConfig {
        DropoutConfig {
            rate: self.mcd_dropout,
            apply_at_training: self.mcd_train_dropout,
            apply_at_inference: true,
        }
    }

    pub fn mcd_hidden(&self, task: Task) -> usize {
        match task {
            Task::OneD => self.mcd_hidden_1d,
            Task::TwoD => self.mcd_hidden_2d,
        }
    }

    pub fn mcd_train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.mcd_learning_rate,
            l2: self.mcd_l2,
            epochs: self.mcd_epochs,
            batch: match self.mcd_batch_size {
                0 => BatchPolicy::Full,
                b => BatchPolicy::MiniBatch(b),
            },
            seed,
        }
    }

    pub fn bnn_model(&self, input_dim: usize) -> BnnModel {
        BnnModel {
            prior_std: self.bnn_prior_std,
            noise_shape: self.bnn_noise_shape,
            noise_rate: self.bnn_noise_rate,
            ..BnnModel::new(input_dim, self.bnn_hidden)
        }
    }

    pub fn nuts(&self, seed: u64) -> NutsConfig {
        NutsConfig {
            warmup: self.bnn_warmup,
            samples: self.bnn_samples,
            target_accept: self.bnn_target_accept,
            max_depth: self.bnn_max_depth,
            seed,
            chains: self.bnn_chains,
            init_radius: self.bnn_init_radius,
            ..NutsConfig::default()
        }
    }

    pub fn regions(&self, task: Task) -> Regions {
        match task {
            Task::OneD => Regions::Line {
                gap_half_width: self.region_gap_half_width,
                data_outer: self.region_data_outer,
            },
            Task::TwoD => Regions::Hole {
                radius: self.region_hole_radius,
            },
        }
    }

    /// 1D: evenly spaced points over the input range. 2D: a square lattice.
    pub fn grid(&self, task: Task) -> DenseMatrix {
        match task {
            Task::OneD => line_grid(DOMAIN_1D.0, DOMAIN_1D.1, self.grid_points_1d),
            Task::TwoD => square_grid(crate::data::FieldSpec2D::default().half_width, self.grid_side_2d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    /// Where training inputs are drawn from.
    Data,
    /// The excluded interval (1D) or the hole (2D).
    Gap,
    /// Beyond the training support (1D only).
    Extrapolation,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Data, Region::Gap, Region::Extrapolation];

    pub fn name(self) -> &'static str {
        match self {
            Region::Data => "data",
            Region::Gap => "gap",
            Region::Extrapolation => "extrapolation",
        }
    }
}

/// Partition of the evaluation domain into disjoint regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regions {
    /// `|x| < gap_half_width` is the gap, `|x| > data_outer` is extrapolation,
    /// everything between is data.
    Line { gap_half_width: f64, data_outer: f64 },
    /// Inside the radius is the gap; the rest of the square is data.
    Hole { radius: f64 },
}

impl Regions {
    pub fn dim(&self) -> usize {
        match self {
            Regions::Line { .. } => 1,
            Regions::Hole { .. } => 2,
        }
    }

    pub fn classify(&self, x: &[f64]) -> Region {
        match *self {
            Regions::Line {
                gap_half_width,
                data_outer,
            } => {
                let a = x[0].abs();
                if a < gap_half_width {
                    Region::Gap
                } else if a > data_outer {
                    Region::Extrapolation
                } else {
                    Region::Data
                }
            }
            Regions::Hole { radius } => {
                if x[0].hypot(x[1]) < radius {
                    Region::Gap
                } else {
                    Region::Data
                }
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Regions::Line {
                gap_half_width,
                data_outer,
            } => format!(
                "gap: |x| < {gap_half_width}; data: {gap_half_width} <= |x| <= {data_outer}; extrapolation: |x| > {data_outer}"
            ),
            Regions::Hole { radius } => format!("gap (hole): |x| < {radius}; data: |x| >= {radius}"),
        }
    }
}

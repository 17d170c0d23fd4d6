//! Predictive-uncertainty benchmark: Monte Carlo dropout networks, exact
//! Gaussian-process regression and a NUTS-sampled Bayesian neural network,
//! compared on synthetic regression tasks with training gaps.

pub mod bnn;
pub mod data;
pub mod error;
pub mod gp;
pub mod harness;
pub mod linalg;
pub mod mcd;
pub mod mlp;
pub mod optim;
pub mod predictive;
pub mod rng;

pub use error::{Error, Result};

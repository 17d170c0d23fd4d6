//! Experiment configuration, metrics, seed sweeps, ensembles and report files.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;

pub use config::{Method, Region, Regions, Settings};
pub use experiment::{
    ensemble_seeds, ensemble_study, fit_model, fit_predict, median, run_experiment, seed_sweep, truth_on, Cell, CellResult,
    EnsembleMember, EnsembleStudy, ExperimentConfig, ExperimentReport, Figure, Fitted, FittedModel, SweepRow, SweepTable,
    REFERENCE_SWEEP_MSE, REFERENCE_TABLE1, SWEEP_N, SWEEP_SIGMA,
};
pub use metrics::{compute_metrics, Metrics, RegionValues, MEAN_STD_ERROR_DEFINITION};
pub use report::{run_figure, write_figure, FigureResult};

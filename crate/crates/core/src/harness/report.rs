//! Writers for experiment outputs. Everything written here is a pure
//! function of the configuration, so reruns reproduce the files byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{write_dataset, NoiseKind, NoiseProfile, Task};
use crate::error::Result;
use crate::harness::config::{Method, Settings};
use crate::harness::experiment::{
    ensemble_seeds, ensemble_study, run_experiment, seed_sweep, EnsembleStudy, ExperimentReport, Figure, SweepTable,
    REFERENCE_SWEEP_MSE, REFERENCE_TABLE1, SWEEP_N, SWEEP_SIGMA,
};
use crate::harness::metrics::{Metrics, MEAN_STD_ERROR_DEFINITION};
use crate::linalg::DenseMatrix;
use crate::predictive::PredictiveGrid;

pub const NOISE_PRIOR_CONVENTION: &str =
    "BNN noise prior: Gamma(shape, rate) on the observation-noise precision 1/variance, in standardized target units";

pub const ENSEMBLE_MEMBERS: usize = 4;
pub const ENSEMBLE_N: usize = 50;
pub const ENSEMBLE_SIGMA: f64 = 0.05;

fn describe_noise(noise: &NoiseProfile) -> String {
    match noise.kind {
        NoiseKind::Constant => format!("constant sigma {}", noise.sigma),
        NoiseKind::SincScaled => format!("sinc-scaled sigma {}", noise.sigma),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// A labelled metrics row for the CSV tables.
pub struct MetricsRow<'a> {
    pub label: String,
    pub method: Method,
    pub n: usize,
    pub seed: u64,
    pub outcome: std::result::Result<&'a Metrics, &'a str>,
}

const METRICS_HEADER: [&str; 18] = [
    "label",
    "method",
    "n",
    "seed",
    "status",
    "mse",
    "std_data",
    "std_gap",
    "std_extrapolation",
    "rho",
    "coverage_data",
    "coverage_gap",
    "coverage_extrapolation",
    "coverage_all",
    "mean_std_error",
    "residual_data",
    "residual_gap",
    "residual_extrapolation",
];

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for row in rows {
        let mut rec = vec![row.label.clone(), row.method.to_string(), row.n.to_string(), row.seed.to_string()];
        match row.outcome {
            Ok(m) => {
                rec.push("ok".into());
                rec.extend([
                    m.mse.to_string(),
                    opt(m.mean_std.data),
                    opt(m.mean_std.gap),
                    opt(m.mean_std.extrapolation),
                    m.rho.to_string(),
                    opt(m.coverage.data),
                    opt(m.coverage.gap),
                    opt(m.coverage.extrapolation),
                    m.coverage_all.to_string(),
                    m.mean_std_error.to_string(),
                    opt(m.abs_residual.data),
                    opt(m.abs_residual.gap),
                    opt(m.abs_residual.extrapolation),
                ]);
            }
            Err(_) => {
                rec.push("failed".into());
                rec.extend(std::iter::repeat_n(String::new(), METRICS_HEADER.len() - 5));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_columns(path: &Path, inputs: &DenseMatrix, names: &[&str], columns: &[&[f64]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..inputs.cols()).map(|j| format!("x{j}")).collect();
    header.extend(names.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for i in 0..inputs.rows() {
        let mut rec: Vec<String> = inputs.row(i).iter().map(|v| v.to_string()).collect();
        rec.extend(columns.iter().map(|c| c[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Noiseless truth on the evaluation grid: `x0[,x1],truth`.
pub fn write_truth(grid: &DenseMatrix, truth: &[f64], path: &Path) -> Result<()> {
    write_columns(path, grid, &["truth"], &[truth])
}

/// The 2D panels of one prediction: `<stem>_mean.csv`, `<stem>_std.csv`,
/// `<stem>_residual.csv`, each `x0,x1,value`. Residual is mean minus truth.
pub fn write_layers(grid: &PredictiveGrid, truth: &[f64], dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let residual: Vec<f64> = grid.mean.iter().zip(truth).map(|(m, t)| m - t).collect();
    let mut out = Vec::new();
    for (layer, values) in [("mean", &grid.mean), ("std", &grid.std), ("residual", &residual)] {
        let path = dir.join(format!("{stem}_{layer}.csv"));
        write_columns(&path, &grid.inputs, &["value"], &[values])?;
        out.push(path);
    }
    Ok(out)
}

fn push_kv(text: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(text, "{key} = {value}");
}

fn metrics_line(m: &Metrics) -> String {
    format!(
        "mse={} std_data={} std_gap={} std_extrapolation={} rho={} coverage_data={} coverage_gap={} coverage_all={} mean_std_error={}",
        m.mse,
        opt(m.mean_std.data),
        opt(m.mean_std.gap),
        opt(m.mean_std.extrapolation),
        m.rho,
        opt(m.coverage.data),
        opt(m.coverage.gap),
        m.coverage_all,
        m.mean_std_error
    )
}

fn common_header(text: &mut String, name: &str, task: Task, noise: &NoiseProfile, settings: &Settings) {
    push_kv(text, "experiment", name);
    push_kv(text, "task", if task == Task::OneD { "1d" } else { "2d" });
    push_kv(text, "noise", describe_noise(noise));
    push_kv(text, "data_seed", settings.data_seed);
    push_kv(text, "regions", settings.regions(task).describe());
    let _ = writeln!(text, "{MEAN_STD_ERROR_DEFINITION}");
    let _ = writeln!(text, "{NOISE_PRIOR_CONVENTION}");
    let _ = writeln!(text, "rho = mean predictive std in the gap / mean predictive std in the data region");
}

pub fn experiment_text(report: &ExperimentReport) -> String {
    let c = &report.config;
    let mut text = String::new();
    common_header(&mut text, &c.name, c.task, &c.noise, &c.settings);
    push_kv(
        &mut text,
        "seeds",
        c.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "),
    );
    push_kv(&mut text, "cells", report.cells.len());
    push_kv(&mut text, "failed_cells", report.failures());
    text.push('\n');
    for cell in &report.cells {
        let head = format!("[{} n={} seed={}]", cell.method, cell.n, cell.seed);
        match &cell.outcome {
            Ok(r) => {
                let _ = writeln!(text, "{head} ok");
                let _ = writeln!(text, "  {}", metrics_line(&r.metrics));
                for (k, v) in &r.notes {
                    let _ = writeln!(text, "  {k} = {v}");
                }
            }
            Err(e) => {
                let _ = writeln!(text, "{head} failed: {e}");
            }
        }
    }
    text
}

/// Datasets, truth, one predictive grid per successful cell (plus 2D
/// panels), the metrics table and the text report.
pub fn write_experiment(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let c = &report.config;
    let mut files = Vec::new();
    for d in &report.datasets {
        let path = dir.join(format!("{}_data_{}.csv", c.name, d.len()));
        let sidecar = write_dataset(d, &path)?;
        files.push(path);
        files.push(sidecar);
    }
    let truth_path = dir.join(format!("{}_truth.csv", c.name));
    write_truth(&report.grid, &report.truth, &truth_path)?;
    files.push(truth_path);

    let mut rows = Vec::new();
    for cell in &report.cells {
        let stem = c.cell_stem(cell.method, cell.n, cell.seed);
        if let Ok(r) = &cell.outcome {
            let path = dir.join(format!("{stem}.csv"));
            r.grid.write_csv(&path)?;
            files.push(path);
            if c.task == Task::TwoD {
                files.extend(write_layers(&r.grid, &report.truth, dir, &stem)?);
            }
        }
        rows.push(MetricsRow {
            label: stem,
            method: cell.method,
            n: cell.n,
            seed: cell.seed,
            outcome: cell.outcome.as_ref().map(|r| &r.metrics).map_err(String::as_str),
        });
    }
    let metrics_path = dir.join(format!("{}_metrics.csv", c.name));
    write_metrics_csv(&rows, &metrics_path)?;
    files.push(metrics_path);
    let report_path = dir.join(format!("{}_report.txt", c.name));
    std::fs::write(&report_path, experiment_text(report))?;
    files.push(report_path);
    Ok(files)
}

pub fn sweep_text(name: &str, table: &SweepTable, settings: &Settings) -> String {
    let mut text = String::new();
    common_header(&mut text, name, Task::OneD, &table.noise, settings);
    push_kv(&mut text, "method", table.method);
    push_kv(&mut text, "n", table.n);
    push_kv(&mut text, "seeds", table.rows.len() + table.failures.len());
    push_kv(&mut text, "failed_seeds", table.failures.len());
    push_kv(&mut text, "mse_mean", table.mse_mean);
    push_kv(&mut text, "mse_std", table.mse_std);
    if table.single_seed {
        let _ = writeln!(text, "note = single seed; mse_std is reported as 0");
    }
    let reference_config = table.method == Method::Mcd
        && table.n == SWEEP_N
        && table.noise == NoiseProfile::constant(SWEEP_SIGMA);
    if reference_config {
        push_kv(&mut text, "reference_mse_mean", REFERENCE_SWEEP_MSE.0);
        push_kv(&mut text, "reference_mse_std", REFERENCE_SWEEP_MSE.1);
        let _ = writeln!(
            text,
            "note = reference values come from a different implementation and random number generator; they are shown for comparison, not expected to match"
        );
    }
    for (seed, e) in &table.failures {
        let _ = writeln!(text, "seed {seed} failed: {e}");
    }
    text
}

/// `<name>.csv` with one row per seed and `<name>_report.txt` with the aggregate.
pub fn write_sweep(name: &str, table: &SweepTable, settings: &Settings, dir: &Path) -> Result<Vec<PathBuf>> {
    let path = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    let reference = name == Figure::Table1.name();
    let mut header = vec!["seed", "mse", "mean_std_error", "rho"];
    if reference {
        header.extend(["reference_mse", "reference_mean_std_error"]);
    }
    w.write_record(&header)?;
    for r in &table.rows {
        let mut rec = vec![r.seed.to_string(), r.mse.to_string(), r.mean_std_error.to_string(), r.rho.to_string()];
        if reference {
            let known = REFERENCE_TABLE1.iter().find(|(s, _, _)| *s == r.seed);
            rec.push(known.map(|k| k.1.to_string()).unwrap_or_default());
            rec.push(known.map(|k| k.2.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    let report_path = dir.join(format!("{name}_report.txt"));
    std::fs::write(&report_path, sweep_text(name, table, settings))?;
    Ok(vec![path, report_path])
}

pub fn ensemble_text(name: &str, studies: &[&EnsembleStudy], settings: &Settings) -> String {
    let mut text = String::new();
    let noise = NoiseProfile::constant(ENSEMBLE_SIGMA);
    common_header(&mut text, name, Task::OneD, &noise, settings);
    for s in studies {
        let _ = writeln!(
            text,
            "\n[ensemble train_dropout={} members={}]",
            s.train_dropout,
            s.members.len()
        );
        let _ = writeln!(text, "  combined {}", metrics_line(&s.metrics));
        let _ = writeln!(text, "  median_member_rho = {}", s.median_member_rho());
        for m in &s.members {
            let _ = writeln!(text, "  member seed={} {}", m.seed, metrics_line(&m.metrics));
        }
    }
    text
}

/// Combined grids, the first member as the single-model reference, and metrics.
pub fn write_ensembles(name: &str, studies: &[&EnsembleStudy], settings: &Settings, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let first = studies[0];
    let data_path = dir.join(format!("{name}_data_{}.csv", first.dataset.len()));
    let sidecar = write_dataset(&first.dataset, &data_path)?;
    files.extend([data_path, sidecar]);
    let truth_path = dir.join(format!("{name}_truth.csv"));
    write_truth(&first.combined.inputs, &first.truth, &truth_path)?;
    files.push(truth_path);

    let single = dir.join(format!("{name}_single.csv"));
    first.members[0].grid.write_csv(&single)?;
    files.push(single);
    let mut rows = Vec::new();
    for s in studies {
        let variant = ensemble_variant(s.train_dropout);
        let path = dir.join(format!("{name}_{variant}.csv"));
        s.combined.write_csv(&path)?;
        files.push(path);
        rows.push(MetricsRow {
            label: variant.into(),
            method: Method::Mcd,
            n: s.dataset.len(),
            seed: s.members[0].seed,
            outcome: Ok(&s.metrics),
        });
        for m in &s.members {
            rows.push(MetricsRow {
                label: format!("{variant}_member_s{}", m.seed),
                method: Method::Mcd,
                n: s.dataset.len(),
                seed: m.seed,
                outcome: Ok(&m.metrics),
            });
        }
    }
    let metrics_path = dir.join(format!("{name}_metrics.csv"));
    write_metrics_csv(&rows, &metrics_path)?;
    files.push(metrics_path);
    let report_path = dir.join(format!("{name}_report.txt"));
    std::fs::write(&report_path, ensemble_text(name, studies, settings))?;
    files.push(report_path);
    Ok(files)
}

pub fn ensemble_variant(train_dropout: bool) -> &'static str {
    if train_dropout {
        "ensemble_dropout"
    } else {
        "ensemble_no_dropout"
    }
}

/// In-memory result of a figure preset.
#[derive(Debug, Clone)]
pub enum FigureResult {
    Experiment(ExperimentReport),
    /// Ensembles with and without train-time dropout.
    Ensembles(EnsembleStudy, EnsembleStudy),
    Table(SweepTable),
}

impl FigureResult {
    pub fn failed_cells(&self) -> usize {
        match self {
            FigureResult::Experiment(r) => r.failures(),
            FigureResult::Table(t) => t.failures.len(),
            FigureResult::Ensembles(..) => 0,
        }
    }

    pub fn numeric_failures(&self) -> usize {
        match self {
            FigureResult::Experiment(r) => r.cells.iter().filter(|c| c.numeric_failure).count(),
            _ => 0,
        }
    }
}

pub fn run_figure(figure: Figure, settings: &Settings) -> Result<FigureResult> {
    settings.validate()?;
    if let Some(config) = figure.experiment(settings) {
        return run_experiment(&config).map(FigureResult::Experiment);
    }
    let noise = NoiseProfile::constant(ENSEMBLE_SIGMA);
    match figure {
        Figure::Fig3 => {
            let seeds = ensemble_seeds(settings.seed, ENSEMBLE_MEMBERS);
            let with = ensemble_study(settings, Task::OneD, ENSEMBLE_N, noise, &seeds, true)?;
            let without = ensemble_study(settings, Task::OneD, ENSEMBLE_N, noise, &seeds, false)?;
            Ok(FigureResult::Ensembles(with, without))
        }
        _ => {
            let seeds: Vec<u64> = REFERENCE_TABLE1.iter().map(|r| r.0).collect();
            let table = seed_sweep(
                settings,
                Method::Mcd,
                Task::OneD,
                SWEEP_N,
                NoiseProfile::constant(SWEEP_SIGMA),
                &seeds,
            )?;
            Ok(FigureResult::Table(table))
        }
    }
}

pub fn write_figure(figure: Figure, result: &FigureResult, settings: &Settings, dir: &Path) -> Result<Vec<PathBuf>> {
    match result {
        FigureResult::Experiment(r) => write_experiment(r, dir),
        FigureResult::Ensembles(a, b) => write_ensembles(figure.name(), &[a, b], settings, dir),
        FigureResult::Table(t) => write_sweep(figure.name(), t, settings, dir),
    }
}

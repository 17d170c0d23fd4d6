use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::bnn::{bnn_predict, sample_posterior, PosteriorSamples};
use crate::data::{DataRecipe, Dataset, NoiseProfile, Task};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, gp_predict, GpHyper, GpPosterior};
use crate::harness::config::{Method, Settings};
use crate::harness::metrics::{compute_metrics, Metrics};
use crate::linalg::DenseMatrix;
use crate::mlp::MlpParams;
use crate::mcd::{architecture, ensemble_combine, mc_predict, train};
use crate::predictive::PredictiveGrid;
use crate::rng::RandomStream;

/// Published per-seed values for the Table-1 configuration: (seed, MSE, mean std error).
pub const REFERENCE_TABLE1: [(u64, f64, f64); 4] =
    [(5, 0.1436, 0.0113), (6, 0.3230, 0.0172), (7, 0.3325, 0.0106), (8, 0.1564, 0.0157)];
/// Published mean and standard deviation of MSE over 100 MCD seeds.
pub const REFERENCE_SWEEP_MSE: (f64, f64) = (0.384, 0.156);

/// Training-set size and noise of the seed-sweep configuration.
pub const SWEEP_N: usize = 150;
pub const SWEEP_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    pub noise: NoiseProfile,
    /// (method, training-set size) pairs, run for every seed.
    pub runs: Vec<(Method, usize)>,
    pub seeds: Vec<u64>,
    pub settings: Settings,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("an experiment needs at least one seed".into()));
        }
        if self.runs.iter().any(|(_, n)| *n == 0) {
            return Err(Error::InvalidConfig("training-set sizes must be at least 1".into()));
        }
        if !(self.noise.sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Distinct training-set sizes in first-use order.
    pub fn sizes(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for (_, n) in &self.runs {
            if !out.contains(n) {
                out.push(*n);
            }
        }
        out
    }

    pub fn recipe(&self, n: usize) -> DataRecipe {
        DataRecipe {
            task: self.task,
            n,
            noise: self.noise,
            gap: self.task == Task::OneD,
            seed: self.settings.data_seed,
        }
    }

    /// File stem of one cell's outputs: the size is included when a method
    /// runs at more than one size, the seed when there is more than one seed.
    pub fn cell_stem(&self, method: Method, n: usize, seed: u64) -> String {
        let mut stem = format!("{}_{}", self.name, method);
        if self.runs.iter().filter(|(m, _)| *m == method).count() > 1 {
            stem.push_str(&format!("_{n}"));
        }
        if self.seeds.len() > 1 {
            stem.push_str(&format!("_s{seed}"));
        }
        stem
    }
}

/// The fitted summary of one method, plus method-specific diagnostics.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub grid: PredictiveGrid,
    pub notes: Vec<(String, String)>,
}

/// A trained model of any method, ready to predict on new grids.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Gp { hyper: GpHyper, nlml: f64 },
    Mcd { params: MlpParams, final_loss: f64 },
    Bnn(PosteriorSamples),
}

impl FittedModel {
    pub fn method(&self) -> Method {
        match self {
            FittedModel::Gp { .. } => Method::Gp,
            FittedModel::Mcd { .. } => Method::Mcd,
            FittedModel::Bnn(_) => Method::Bnn,
        }
    }

    /// `dataset` must be the training set: the GP conditions on it and every
    /// method maps through its standardizer.
    pub fn predict(&self, dataset: &Dataset, settings: &Settings, seed: u64, grid: &DenseMatrix) -> Result<PredictiveGrid> {
        match self {
            FittedModel::Gp { hyper, .. } => {
                let posterior = GpPosterior::new(dataset, *hyper)?;
                gp_predict(&posterior, grid, settings.gp_include_noise)
            }
            FittedModel::Mcd { params, .. } => {
                let stream = RandomStream::new(seed).fork_named("mcd").fork_named("predict");
                mc_predict(params, grid, &dataset.standardizer, &settings.dropout(), settings.mcd_passes, &stream)
            }
            FittedModel::Bnn(samples) => bnn_predict(samples, grid, &dataset.standardizer, settings.bnn_include_noise),
        }
    }

    pub fn notes(&self) -> Vec<(String, String)> {
        match self {
            FittedModel::Gp { hyper, nlml } => vec![
                ("lengthscale".into(), hyper.lengthscale().to_string()),
                ("signal_variance".into(), hyper.signal_variance().to_string()),
                ("noise_variance".into(), hyper.noise_variance().to_string()),
                ("nlml".into(), nlml.to_string()),
            ],
            FittedModel::Mcd { params, final_loss } => vec![
                ("architecture".into(), format!("{:?}", params.sizes())),
                ("final_loss".into(), final_loss.to_string()),
            ],
            FittedModel::Bnn(samples) => {
                let mean_precision = samples.precision.iter().sum::<f64>() / samples.len() as f64;
                let mut notes = vec![
                    ("draws".into(), samples.len().to_string()),
                    ("divergences".into(), samples.divergences().to_string()),
                    ("mean_accept_stat".into(), samples.mean_accept_stat().to_string()),
                    ("step_sizes".into(), format!("{:?}", samples.step_sizes)),
                    ("mean_noise_precision".into(), mean_precision.to_string()),
                ];
                if samples.stats.iter().any(|s| s.chain > 0) {
                    notes.push(("log_precision_rhat".into(), samples.precision_rhat().to_string()));
                }
                notes
            }
        }
    }
}

/// Trains `method` on the dataset. The BNN is refused for inputs of more than one dimension.
pub fn fit_model(method: Method, dataset: &Dataset, settings: &Settings, seed: u64) -> Result<FittedModel> {
    match method {
        Method::Gp => {
            let cfg = settings.gp_fit();
            let fit = fit_gp(dataset, cfg.init, cfg.steps, cfg.learning_rate)?;
            Ok(FittedModel::Gp {
                hyper: fit.hyper,
                nlml: fit.nlml,
            })
        }
        Method::Mcd => {
            let task = if dataset.dim() == 1 { Task::OneD } else { Task::TwoD };
            let sizes = architecture(dataset.dim(), settings.mcd_hidden(task));
            let outcome = train(dataset, &sizes, &settings.dropout(), &settings.mcd_train(seed))?;
            let final_loss = outcome.history.last().copied().unwrap_or(f64::NAN);
            Ok(FittedModel::Mcd {
                params: outcome.params,
                final_loss,
            })
        }
        Method::Bnn => {
            if dataset.dim() != 1 {
                return Err(Error::InvalidConfig("the BNN is only available for 1D data".into()));
            }
            let model = settings.bnn_model(dataset.dim());
            sample_posterior(dataset, &model, &settings.nuts(seed)).map(FittedModel::Bnn)
        }
    }
}

/// Fits `method` on the dataset and summarises its predictive distribution on `grid`.
pub fn fit_predict(method: Method, dataset: &Dataset, settings: &Settings, seed: u64, grid: &DenseMatrix) -> Result<Fitted> {
    let model = fit_model(method, dataset, settings, seed)?;
    let grid = model.predict(dataset, settings, seed, grid)?;
    Ok(Fitted {
        grid,
        notes: model.notes(),
    })
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub grid: PredictiveGrid,
    pub metrics: Metrics,
    pub notes: Vec<(String, String)>,
}

/// One (method, size, seed) run. Failures are kept as messages so the rest
/// of the experiment still reports.
#[derive(Debug, Clone)]
pub struct Cell {
    pub method: Method,
    pub n: usize,
    pub seed: u64,
    pub outcome: std::result::Result<CellResult, String>,
    /// True when the failure was numerical rather than a configuration problem.
    pub numeric_failure: bool,
    pub wall_time: Duration,
}

impl Cell {
    pub fn metrics(&self) -> Option<&Metrics> {
        self.outcome.as_ref().ok().map(|r| &r.metrics)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub grid: DenseMatrix,
    pub truth: Vec<f64>,
    /// One dataset per training-set size, in `config.sizes()` order.
    pub datasets: Vec<Dataset>,
    pub cells: Vec<Cell>,
}

impl ExperimentReport {
    pub fn dataset(&self, n: usize) -> Option<&Dataset> {
        self.datasets.iter().find(|d| d.len() == n)
    }

    pub fn cells_for(&self, method: Method, n: usize) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(move |c| c.method == method && c.n == n)
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }
}

pub fn truth_on(dataset: &Dataset, grid: &DenseMatrix) -> Result<Vec<f64>> {
    let truth = dataset
        .truth
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("dataset has no known truth to score against".into()))?;
    Ok((0..grid.rows()).map(|i| truth.eval(grid.row(i))).collect())
}

fn run_cell(config: &ExperimentConfig, method: Method, dataset: &Dataset, seed: u64, grid: &DenseMatrix, truth: &[f64]) -> Cell {
    let start = Instant::now();
    let result = fit_predict(method, dataset, &config.settings, seed, grid).and_then(|fitted| {
        let metrics = compute_metrics(&fitted.grid, truth, &config.noise, &config.settings.regions(config.task))?;
        Ok(CellResult {
            grid: fitted.grid,
            metrics,
            notes: fitted.notes,
        })
    });
    let numeric_failure = result.as_ref().err().is_some_and(Error::is_numeric);
    Cell {
        method,
        n: dataset.len(),
        seed,
        outcome: result.map_err(|e| e.to_string()),
        numeric_failure,
        wall_time: start.elapsed(),
    }
}

/// Runs every (method, size) pair for every seed on the shared grid.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let grid = config.settings.grid(config.task);
    let datasets: Vec<Dataset> = config.sizes().iter().map(|n| config.recipe(*n).generate()).collect();
    let truth = match datasets.first() {
        Some(d) => truth_on(d, &grid)?,
        None => truth_on(&config.recipe(1).generate(), &grid)?,
    };
    let mut cells = Vec::new();
    for &seed in &config.seeds {
        for &(method, n) in &config.runs {
            let dataset = datasets.iter().find(|d| d.len() == n).expect("dataset per size");
            cells.push(run_cell(config, method, dataset, seed, &grid, &truth));
        }
    }
    Ok(ExperimentReport {
        config: config.clone(),
        grid,
        truth,
        datasets,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub mse: f64,
    pub mean_std_error: f64,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub method: Method,
    pub n: usize,
    pub noise: NoiseProfile,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<(u64, String)>,
    pub mse_mean: f64,
    /// Sample standard deviation over rows; 0 when there is a single row.
    pub mse_std: f64,
    pub single_seed: bool,
}

/// Trains one model per seed on a fixed dataset and tabulates its errors.
pub fn seed_sweep(
    settings: &Settings,
    method: Method,
    task: Task,
    n: usize,
    noise: NoiseProfile,
    seeds: &[u64],
) -> Result<SweepTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("a sweep needs at least one seed".into()));
    }
    let config = ExperimentConfig {
        name: "sweep".into(),
        task,
        noise,
        runs: vec![(method, n)],
        seeds: seeds.to_vec(),
        settings: settings.clone(),
    };
    let report = run_experiment(&config)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for cell in &report.cells {
        match &cell.outcome {
            Ok(r) => rows.push(SweepRow {
                seed: cell.seed,
                mse: r.metrics.mse,
                mean_std_error: r.metrics.mean_std_error,
                rho: r.metrics.rho,
            }),
            Err(e) => failures.push((cell.seed, e.clone())),
        }
    }
    let k = rows.len() as f64;
    let mse_mean = rows.iter().map(|r| r.mse).sum::<f64>() / k;
    let mse_std = if rows.len() > 1 {
        (rows.iter().map(|r| (r.mse - mse_mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(SweepTable {
        method,
        n,
        noise,
        single_seed: rows.len() == 1,
        rows,
        failures,
        mse_mean,
        mse_std,
    })
}

#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub seed: u64,
    pub grid: PredictiveGrid,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct EnsembleStudy {
    pub dataset: Dataset,
    pub truth: Vec<f64>,
    pub members: Vec<EnsembleMember>,
    pub combined: PredictiveGrid,
    pub metrics: Metrics,
    pub train_dropout: bool,
}

impl EnsembleStudy {
    pub fn median_member_rho(&self) -> f64 {
        median(&self.members.iter().map(|m| m.metrics.rho).collect::<Vec<_>>())
    }
}

/// Trains one MCD model per seed and combines their predictive summaries.
pub fn ensemble_study(
    settings: &Settings,
    task: Task,
    n: usize,
    noise: NoiseProfile,
    seeds: &[u64],
    train_dropout: bool,
) -> Result<EnsembleStudy> {
    if seeds.len() < 2 {
        return Err(Error::InsufficientMembers(seeds.len()));
    }
    let settings = Settings {
        mcd_train_dropout: train_dropout,
        ..settings.clone()
    };
    settings.validate()?;
    let config = ExperimentConfig {
        name: "ensemble".into(),
        task,
        noise,
        runs: vec![(Method::Mcd, n)],
        seeds: seeds.to_vec(),
        settings: settings.clone(),
    };
    let dataset = config.recipe(n).generate();
    let grid = settings.grid(task);
    let truth = truth_on(&dataset, &grid)?;
    let regions = settings.regions(task);
    let mut members = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let fitted = fit_predict(Method::Mcd, &dataset, &settings, seed, &grid)?;
        let metrics = compute_metrics(&fitted.grid, &truth, &noise, &regions)?;
        members.push(EnsembleMember {
            seed,
            grid: fitted.grid,
            metrics,
        });
    }
    let grids: Vec<PredictiveGrid> = members.iter().map(|m| m.grid.clone()).collect();
    let combined = ensemble_combine(&grids)?;
    let metrics = compute_metrics(&combined, &truth, &noise, &regions)?;
    Ok(EnsembleStudy {
        dataset,
        truth,
        members,
        combined,
        metrics,
        train_dropout,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// The reproducible figure and table presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    Table1,
}

impl Figure {
    pub const ALL: [Figure; 5] = [Figure::Fig1, Figure::Fig2, Figure::Fig3, Figure::Fig4, Figure::Table1];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig1 => "fig1",
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Table1 => "table1",
        }
    }

    pub fn valid_names() -> String {
        Figure::ALL.map(Figure::name).join(", ")
    }

    /// Experiment grid behind the figure; `None` for the ensemble and table presets.
    pub fn experiment(self, settings: &Settings) -> Option<ExperimentConfig> {
        let base = |name: &str, task, sigma, runs| ExperimentConfig {
            name: name.into(),
            task,
            noise: NoiseProfile::constant(sigma),
            runs,
            seeds: vec![settings.seed],
            settings: settings.clone(),
        };
        match self {
            Figure::Fig1 => {
                let runs = [15, 50, 150]
                    .iter()
                    .flat_map(|n| Method::ALL.map(|m| (m, *n)))
                    .collect();
                Some(base("fig1", Task::OneD, 0.05, runs))
            }
            Figure::Fig2 => Some(base("fig2", Task::OneD, 0.2, Method::ALL.map(|m| (m, 50)).to_vec())),
            Figure::Fig4 => Some(base(
                "fig4",
                Task::TwoD,
                0.05,
                vec![(Method::Gp, 500), (Method::Mcd, 10_000)],
            )),
            Figure::Fig3 | Figure::Table1 => None,
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown figure {s:?}; valid names: {}", Figure::valid_names())))
    }
}

/// Seeds of the ensemble members for a base seed.
pub fn ensemble_seeds(base: u64, members: usize) -> Vec<u64> {
    (0..members as u64).map(|i| base + i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> Settings {
        Settings {
            mcd_epochs: 50,
            mcd_passes: 20,
            gp_steps: 20,
            bnn_warmup: 20,
            bnn_samples: 20,
            bnn_hidden: 4,
            grid_points_1d: 60,
            ..Settings::default()
        }
    }

    #[test]
    fn figure_names() {
        for f in Figure::ALL {
            assert_eq!(f.name().parse::<Figure>().unwrap(), f);
        }
        let err = "fig9".parse::<Figure>().unwrap_err().to_string();
        assert!(err.contains("fig1, fig2, fig3, fig4, table1"));
    }

    #[test]
    fn fig1_layout_and_names() {
        let c = Figure::Fig1.experiment(&Settings::default()).unwrap();
        assert_eq!(c.runs.len(), 9);
        assert_eq!(c.sizes(), vec![15, 50, 150]);
        assert_eq!(c.cell_stem(Method::Gp, 50, 0), "fig1_gp_50");
        let c2 = Figure::Fig2.experiment(&Settings::default()).unwrap();
        assert_eq!(c2.cell_stem(Method::Bnn, 50, 0), "fig2_bnn");
        let c4 = Figure::Fig4.experiment(&Settings::default()).unwrap();
        assert_eq!(c4.cell_stem(Method::Mcd, 10_000, 0), "fig4_mcd");
    }

    #[test]
    fn empty_method_set_still_reports_data() {
        let config = ExperimentConfig {
            name: "none".into(),
            task: Task::OneD,
            noise: NoiseProfile::constant(0.05),
            runs: vec![],
            seeds: vec![0],
            settings: quick(),
        };
        let r = run_experiment(&config).unwrap();
        assert!(r.cells.is_empty() && r.datasets.is_empty());
        assert_eq!(r.truth.len(), 60);
    }

    #[test]
    fn failures_are_recorded_per_cell() {
        let config = ExperimentConfig {
            name: "mixed".into(),
            task: Task::TwoD,
            noise: NoiseProfile::constant(0.05),
            runs: vec![(Method::Bnn, 30), (Method::Gp, 30)],
            seeds: vec![0],
            settings: Settings {
                grid_side_2d: 12,
                ..quick()
            },
        };
        let r = run_experiment(&config).unwrap();
        assert_eq!(r.failures(), 1);
        assert!(r.cells[0].outcome.as_ref().unwrap_err().contains("1D"));
        assert!(!r.cells[0].numeric_failure);
        assert!(r.cells[1].outcome.is_ok());
    }

    #[test]
    fn sweep_aggregates() {
        let t = seed_sweep(&quick(), Method::Mcd, Task::OneD, 20, NoiseProfile::constant(0.05), &[1, 2, 3]).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert!(!t.single_seed && t.mse_std > 0.0);
        let one = seed_sweep(&quick(), Method::Mcd, Task::OneD, 20, NoiseProfile::constant(0.05), &[4]).unwrap();
        assert!(one.single_seed);
        assert_eq!(one.mse_std, 0.0);
        assert_eq!(one.mse_mean, one.rows[0].mse);
    }

    #[test]
    fn ensemble_preconditions_and_identity() {
        let noise = NoiseProfile::constant(0.05);
        assert!(matches!(
            ensemble_study(&quick(), Task::OneD, 20, noise, &[3], true),
            Err(Error::InsufficientMembers(1))
        ));
        let e = ensemble_study(&quick(), Task::OneD, 20, noise, &[3, 3], true).unwrap();
        assert_eq!(e.combined.mean, e.members[0].grid.mean);
        assert_eq!(e.combined.std, e.members[0].grid.std);
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}

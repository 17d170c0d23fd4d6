use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use uqbench_core::bnn::{BnnModel, PosteriorSamples};
use uqbench_core::data::{read_dataset, write_dataset, DataRecipe, Dataset, NoiseProfile, Task};
use uqbench_core::gp::GpHyper;
use uqbench_core::harness::report::{ensemble_text, ensemble_variant, sweep_text, write_ensembles, write_sweep};
use uqbench_core::harness::{
    ensemble_seeds, ensemble_study, fit_model, run_figure, seed_sweep, truth_on, write_figure, Figure, FigureResult,
    FittedModel, Method, Settings, REFERENCE_TABLE1,
};
use uqbench_core::mcd::{read_checkpoint, write_checkpoint};
use uqbench_core::predictive::PredictiveGrid;
use uqbench_core::Error;

use crate::manifest::{Manifest, Status};
use crate::plot::{band_plot, heatmap};
use crate::{Cli, Command, Global};

/// 2 for numerical failures, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map_or(1, |err| if err.is_numeric() { 2 } else { 1 })
}

pub fn dispatch(cli: Cli) -> Result<u8> {
    let g = cli.global;
    if let Some(Command::Predict { model_file, data, passes }) = cli.command {
        return predict(&g, &model_file, data, passes);
    }
    let base = match &g.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let settings = resolve_settings(&g, base)?;
    if g.show_config {
        print!("{}", settings.to_toml());
        return Ok(0);
    }
    let Some(command) = cli.command else {
        bail!("no command given; run `uqbench --help`");
    };
    match command {
        Command::Gen {
            dim,
            n,
            sigma,
            sinc_noise,
            no_gap,
        } => gen(&g, &settings, dim, n, sigma, sinc_noise, no_gap),
        Command::Fit { model, data, passes } => fit(&g, settings, model, &data, passes),
        Command::Experiment { figure } => experiment(&g, &settings, figure),
        Command::Sweep {
            method,
            n,
            sigma,
            seeds,
        } => sweep(&g, &settings, method, n, sigma, &seeds.0),
        Command::Ensemble {
            members,
            n,
            sigma,
            no_train_dropout,
        } => ensemble(&g, &settings, members, n, sigma, !no_train_dropout),
        Command::Predict { .. } => unreachable!(),
    }
}

/// Applies `--set` overrides and `--seed` on top of `base`.
fn resolve_settings(g: &Global, base: Settings) -> Result<Settings> {
    let mut table = toml::Table::try_from(&base).context("serializing settings")?;
    for item in &g.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got {item:?}")))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.trim().to_string(), value);
    }
    let mut settings = Settings::from_toml(&toml::to_string(&table)?)?;
    if let Some(seed) = g.seed {
        settings.seed = seed;
    }
    Ok(settings)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Runs `body`, marking the manifest failed if it returns an error.
fn guarded<T>(manifest: &mut Manifest, body: impl FnOnce(&mut Manifest) -> Result<T>) -> Result<T> {
    match body(manifest) {
        Ok(v) => Ok(v),
        Err(e) => {
            manifest.failures.push(format!("{e:#}"));
            manifest.finish(Status::Failed)?;
            Err(e)
        }
    }
}

fn task_of(dataset: &Dataset) -> Task {
    if dataset.dim() == 1 {
        Task::OneD
    } else {
        Task::TwoD
    }
}

fn gen(g: &Global, settings: &Settings, dim: u8, n: usize, sigma: f64, sinc: bool, no_gap: bool) -> Result<u8> {
    if n == 0 || !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("need n > 0 and a finite sigma >= 0, got n={n} sigma={sigma}")).into());
    }
    let seed = g.seed.unwrap_or(settings.data_seed);
    let recipe = DataRecipe {
        task: if dim == 1 { Task::OneD } else { Task::TwoD },
        n,
        noise: if sinc {
            NoiseProfile::sinc_scaled(sigma)
        } else {
            NoiseProfile::constant(sigma)
        },
        gap: !no_gap,
        seed,
    };
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("data.csv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let snapshot = Settings {
        data_seed: seed,
        ..settings.clone()
    };
    let mut manifest = Manifest::start(out.with_extension("manifest.toml"), &snapshot, Vec::new())?;
    guarded(&mut manifest, |m| {
        let t = Instant::now();
        let dataset = recipe.generate();
        let sidecar = write_dataset(&dataset, &out)?;
        m.time("generate", t.elapsed().as_secs_f64());
        m.add_outputs([out.clone(), sidecar]);
        Ok(())
    })?;
    manifest.finish(Status::Complete)?;
    println!("wrote {n} points to {}", out.display());
    Ok(0)
}

/// Saved-model descriptor written by `fit` and read by `predict`.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    method: Method,
    seed: u64,
    data: PathBuf,
    /// Sibling file holding the weights or posterior draws.
    #[serde(skip_serializing_if = "Option::is_none")]
    artifact: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gp: Option<GpHyper>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bnn: Option<BnnModel>,
    settings: Settings,
}

fn save_model(model: &FittedModel, data: &Path, settings: &Settings, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    let tag = model.method().tag();
    let mut file = ModelFile {
        method: model.method(),
        seed,
        data: data.to_path_buf(),
        artifact: None,
        gp: None,
        bnn: None,
        settings: settings.clone(),
    };
    let mut written = Vec::new();
    match model {
        FittedModel::Gp { hyper, .. } => file.gp = Some(*hyper),
        FittedModel::Mcd { params, .. } => {
            let name = format!("{tag}_checkpoint.txt");
            write_checkpoint(params, settings.mcd_dropout, &dir.join(&name))?;
            written.push(dir.join(&name));
            file.artifact = Some(name);
        }
        FittedModel::Bnn(samples) => {
            let name = format!("{tag}_samples.csv");
            samples.write_csv(&dir.join(&name))?;
            written.push(dir.join(&name));
            file.artifact = Some(name);
            file.bnn = Some(samples.model.clone());
        }
    }
    let path = dir.join(format!("{tag}_model.toml"));
    fs::write(&path, toml::to_string(&file)?)?;
    written.push(path);
    Ok(written)
}

fn load_model(file: &ModelFile, dir: &Path) -> Result<FittedModel> {
    let artifact = || {
        file.artifact
            .as_ref()
            .map(|a| dir.join(a))
            .ok_or_else(|| anyhow!("model file names no artifact"))
    };
    Ok(match file.method {
        Method::Gp => FittedModel::Gp {
            hyper: file.gp.ok_or_else(|| anyhow!("model file has no [gp] hyperparameters"))?,
            nlml: f64::NAN,
        },
        Method::Mcd => {
            let (params, _) = read_checkpoint(&artifact()?)?;
            FittedModel::Mcd {
                params,
                final_loss: f64::NAN,
            }
        }
        Method::Bnn => {
            let model = file.bnn.as_ref().ok_or_else(|| anyhow!("model file has no [bnn] section"))?;
            FittedModel::Bnn(PosteriorSamples::read_csv(&artifact()?, model)?)
        }
    })
}

/// Grid CSV plus SVG panels.
fn write_prediction(grid: &PredictiveGrid, dataset: &Dataset, dir: &Path, stem: &str, title: &str) -> Result<Vec<PathBuf>> {
    let csv = dir.join(format!("{stem}.csv"));
    grid.write_csv(&csv)?;
    let truth = truth_on(dataset, &grid.inputs).ok();
    let mut files = vec![csv];
    files.extend(render(grid, truth.as_deref(), dataset, dir, stem, title)?);
    Ok(files)
}

fn render(
    grid: &PredictiveGrid,
    truth: Option<&[f64]>,
    dataset: &Dataset,
    dir: &Path,
    stem: &str,
    title: &str,
) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if grid.dim() == 1 {
        let path = dir.join(format!("{stem}.svg"));
        fs::write(&path, band_plot(grid, truth, dataset.inputs.as_slice(), &dataset.targets, title))?;
        files.push(path);
        return Ok(files);
    }
    let mut layers = vec![("mean", grid.mean.clone()), ("std", grid.std.clone())];
    if let Some(truth) = truth {
        layers.push(("residual", grid.mean.iter().zip(truth).map(|(m, t)| m - t).collect()));
    }
    for (layer, values) in layers {
        let path = dir.join(format!("{stem}_{layer}.svg"));
        fs::write(&path, heatmap(&grid.inputs, &values, &format!("{title} {layer}")))?;
        files.push(path);
    }
    Ok(files)
}

fn fit(g: &Global, mut settings: Settings, method: Method, data: &Path, passes: Option<usize>) -> Result<u8> {
    if let Some(p) = passes {
        settings.mcd_passes = p;
        settings.validate()?;
    }
    let dataset = read_dataset(data)?;
    if method == Method::Bnn && dataset.dim() != 1 {
        return Err(Error::InvalidConfig(format!(
            "the BNN is only available for 1D data; {} has {} input columns",
            data.display(),
            dataset.dim()
        ))
        .into());
    }
    let data = fs::canonicalize(data)?;
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    ensure_dir(&dir)?;
    let tag = method.tag();
    let seed = settings.seed;
    let mut manifest = Manifest::start(dir.join(format!("{tag}_manifest.toml")), &settings, vec![seed])?;
    guarded(&mut manifest, |m| {
        let t = Instant::now();
        let model = fit_model(method, &dataset, &settings, seed)?;
        m.time("fit", t.elapsed().as_secs_f64());
        m.add_outputs(save_model(&model, &data, &settings, seed, &dir)?);
        let t = Instant::now();
        let grid = model.predict(&dataset, &settings, seed, &settings.grid(task_of(&dataset)))?;
        m.time("predict", t.elapsed().as_secs_f64());
        m.add_outputs(write_prediction(&grid, &dataset, &dir, &format!("{tag}_grid"), tag)?);
        for (k, v) in model.notes() {
            println!("{k} = {v}");
        }
        Ok(())
    })?;
    manifest.finish(Status::Complete)?;
    println!("wrote {}", dir.display());
    Ok(0)
}

fn predict(g: &Global, model_file: &Path, data: Option<PathBuf>, passes: Option<usize>) -> Result<u8> {
    let text = fs::read_to_string(model_file).with_context(|| format!("reading {}", model_file.display()))?;
    let file: ModelFile = toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", model_file.display())))?;
    let base = match &g.config {
        Some(path) => Settings::load(path)?,
        None => file.settings.clone(),
    };
    let mut settings = resolve_settings(g, base)?;
    if g.seed.is_none() {
        settings.seed = file.seed;
    }
    if let Some(p) = passes {
        settings.mcd_passes = p;
    }
    settings.validate()?;
    if g.show_config {
        print!("{}", settings.to_toml());
        return Ok(0);
    }
    let model_dir = model_file.parent().unwrap_or(Path::new("."));
    let model = load_model(&file, model_dir)?;
    let dataset = read_dataset(data.as_deref().unwrap_or(&file.data))?;
    let dir = g.out.clone().unwrap_or_else(|| model_dir.to_path_buf());
    ensure_dir(&dir)?;
    let tag = file.method.tag();
    let mut manifest = Manifest::start(dir.join(format!("{tag}_predict_manifest.toml")), &settings, vec![settings.seed])?;
    guarded(&mut manifest, |m| {
        let t = Instant::now();
        let grid = model.predict(&dataset, &settings, settings.seed, &settings.grid(task_of(&dataset)))?;
        m.time("predict", t.elapsed().as_secs_f64());
        m.add_outputs(write_prediction(&grid, &dataset, &dir, &format!("{tag}_predict"), tag)?);
        Ok(())
    })?;
    manifest.finish(Status::Complete)?;
    println!("wrote {}", dir.display());
    Ok(0)
}

fn experiment(g: &Global, settings: &Settings, figure: Figure) -> Result<u8> {
    let dir = g.out.clone().unwrap_or_else(|| Path::new("results").join(figure.name()));
    ensure_dir(&dir)?;
    let seeds = match figure {
        Figure::Fig3 => ensemble_seeds(settings.seed, uqbench_core::harness::report::ENSEMBLE_MEMBERS),
        Figure::Table1 => REFERENCE_TABLE1.iter().map(|r| r.0).collect(),
        _ => vec![settings.seed],
    };
    let mut manifest = Manifest::start(dir.join("manifest.toml"), settings, seeds)?;
    let result = guarded(&mut manifest, |m| {
        let t = Instant::now();
        let result = run_figure(figure, settings)?;
        m.time("run", t.elapsed().as_secs_f64());
        m.add_outputs(write_figure(figure, &result, settings, &dir)?);
        m.add_outputs(render_figure(&result, &dir)?);
        Ok(result)
    })?;
    match &result {
        FigureResult::Experiment(r) => {
            for c in &r.cells {
                let stem = r.config.cell_stem(c.method, c.n, c.seed);
                manifest.time(stem.clone(), c.wall_time.as_secs_f64());
                if let Err(e) = &c.outcome {
                    manifest.failures.push(format!("{stem}: {e}"));
                }
            }
        }
        FigureResult::Table(t) => {
            for (seed, e) in &t.failures {
                manifest.failures.push(format!("seed {seed}: {e}"));
            }
        }
        FigureResult::Ensembles(..) => {}
    }
    let failed = result.failed_cells();
    manifest.finish(if failed == 0 { Status::Complete } else { Status::Partial })?;
    let report = manifest
        .outputs
        .iter()
        .find(|p| p.to_string_lossy().ends_with("_report.txt"))
        .map(fs::read_to_string)
        .transpose()?;
    if let Some(report) = report {
        print!("{report}");
    }
    println!("wrote {} files to {}", manifest.outputs.len(), dir.display());
    Ok(match failed {
        0 => 0,
        _ if result.numeric_failures() > 0 => {
            eprintln!("{failed} cell(s) failed; see {}", manifest.path().display());
            2
        }
        _ => {
            eprintln!("{failed} cell(s) failed; see {}", manifest.path().display());
            1
        }
    })
}

fn render_figure(result: &FigureResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    match result {
        FigureResult::Experiment(r) => {
            for c in &r.cells {
                let (Ok(out), Some(dataset)) = (&c.outcome, r.dataset(c.n)) else {
                    continue;
                };
                let stem = r.config.cell_stem(c.method, c.n, c.seed);
                let title = format!("{} n={}", c.method, c.n);
                files.extend(render(&out.grid, Some(&r.truth), dataset, dir, &stem, &title)?);
            }
        }
        FigureResult::Ensembles(a, b) => {
            let name = "fig3";
            let single = &a.members[0].grid;
            files.extend(render(single, Some(&a.truth), &a.dataset, dir, &format!("{name}_single"), "single MCD")?);
            for s in [a, b] {
                let variant = ensemble_variant(s.train_dropout);
                files.extend(render(&s.combined, Some(&s.truth), &s.dataset, dir, &format!("{name}_{variant}"), variant)?);
            }
        }
        FigureResult::Table(_) => {}
    }
    Ok(files)
}

fn sweep(g: &Global, settings: &Settings, method: Method, n: usize, sigma: f64, seeds: &[u64]) -> Result<u8> {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("results/sweep"));
    ensure_dir(&dir)?;
    let mut manifest = Manifest::start(dir.join("manifest.toml"), settings, seeds.to_vec())?;
    let table = guarded(&mut manifest, |m| {
        let t = Instant::now();
        let table = seed_sweep(settings, method, Task::OneD, n, NoiseProfile::constant(sigma), seeds)?;
        m.time("run", t.elapsed().as_secs_f64());
        m.add_outputs(write_sweep("sweep", &table, settings, &dir)?);
        Ok(table)
    })?;
    for (seed, e) in &table.failures {
        manifest.failures.push(format!("seed {seed}: {e}"));
    }
    let failed = table.failures.len();
    manifest.finish(if failed == 0 { Status::Complete } else { Status::Partial })?;
    print!("{}", sweep_text("sweep", &table, settings));
    Ok(if failed == 0 { 0 } else { 2 })
}

fn ensemble(g: &Global, settings: &Settings, members: usize, n: usize, sigma: f64, train_dropout: bool) -> Result<u8> {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("results/ensemble"));
    ensure_dir(&dir)?;
    let seeds = ensemble_seeds(settings.seed, members);
    let mut manifest = Manifest::start(dir.join("manifest.toml"), settings, seeds.clone())?;
    let study = guarded(&mut manifest, |m| {
        let t = Instant::now();
        let study = ensemble_study(settings, Task::OneD, n, NoiseProfile::constant(sigma), &seeds, train_dropout)?;
        m.time("run", t.elapsed().as_secs_f64());
        m.add_outputs(write_ensembles("ensemble", &[&study], settings, &dir)?);
        let variant = ensemble_variant(train_dropout);
        m.add_outputs(render(&study.members[0].grid, Some(&study.truth), &study.dataset, &dir, "ensemble_single", "single MCD")?);
        m.add_outputs(render(&study.combined, Some(&study.truth), &study.dataset, &dir, &format!("ensemble_{variant}"), variant)?);
        Ok(study)
    })?;
    manifest.finish(Status::Complete)?;
    print!("{}", ensemble_text("ensemble", &[&study], settings));
    Ok(0)
}

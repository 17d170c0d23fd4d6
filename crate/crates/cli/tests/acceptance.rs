//! Acceptance criteria, one line each. Run a subset with
//! `cargo test -p uqbench-cli --test acceptance -- 3 7`.

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use oracles::*;
use uqbench_core::bnn::{effective_sample_size, nuts_sample, BnnModel, LogDensity, NutsConfig};
use uqbench_core::data::{DataRecipe, NoiseProfile, Standardizer, Task};
use uqbench_core::gp::{nlml_raw, GpHyper, GpPosterior};
use uqbench_core::harness::report::sweep_text;
use uqbench_core::harness::*;
use uqbench_core::linalg::{dot, DenseMatrix};
use uqbench_core::mcd::{loss_and_grad, mc_predict, DropoutConfig};
use uqbench_core::mlp::{init_mlp, param_count, DropoutMasks, MlpParams};
use uqbench_core::rng::RandomStream;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn c1_gp_oracle() -> Outcome {
    let t = Instant::now();
    let mut s = RandomStream::new(101);
    let (mut worst_pred, mut worst_nlml, mut worst_grad) = (0.0f64, 0.0f64, 0.0f64);
    for (n, d) in [(1, 1), (3, 1), (7, 2), (12, 1), (16, 2), (20, 1), (20, 2)] {
        let x = DenseMatrix::from_vec(n, d, (0..n * d).map(|_| s.uniform_range(-2.0, 2.0)).collect()).unwrap();
        let y: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let xs = DenseMatrix::from_vec(25, d, (0..25 * d).map(|_| s.uniform_range(-3.0, 3.0)).collect()).unwrap();
        let (ell, sf2, sn2) = (s.uniform_range(0.3, 2.0), s.uniform_range(0.3, 3.0), s.uniform_range(0.005, 0.5));
        let hyper = GpHyper::new(ell, sf2, sn2);
        let post = GpPosterior::from_standardized(x.clone(), &y, hyper, Standardizer::identity(d)).unwrap();
        let (mean, var) = post.predict_standardized(&xs, false).unwrap();
        let (m_ref, v_ref) = dense_gp_predict(&x, &y, &xs, ell, sf2, sn2);
        for i in 0..25 {
            worst_pred = worst_pred.max((mean[i] - m_ref[i]).abs()).max((var[i] - v_ref[i].max(0.0)).abs());
        }
        let (value, grad) = nlml_raw(&hyper, &x, &y).unwrap();
        worst_nlml = worst_nlml.max((value - dense_nlml(&x, &y, ell, sf2, sn2)).abs());
        let fd = central_diff(
            |p| nlml_raw(&GpHyper { log_lengthscale: p[0], log_signal_variance: p[1], log_noise_variance: p[2] }, &x, &y).unwrap().0,
            &[ell.ln(), sf2.ln(), sn2.ln()],
            1e-5,
        );
        for k in 0..3 {
            worst_grad = worst_grad.max((grad[k] - fd[k]).abs());
        }
    }
    let elapsed = t.elapsed();
    check(
        worst_pred < 1e-8 && worst_nlml < 1e-8 && worst_grad < 1e-5 && within(elapsed, 5.0),
        format!("max |Δpred| {worst_pred:.1e}, |Δnlml| {worst_nlml:.1e}, |Δgrad| {worst_grad:.1e}, {elapsed:.1?}"),
    )
}

fn c2_mcd_oracle() -> Outcome {
    let t = Instant::now();
    let passes = 100_000;
    let x = DenseMatrix::column(&[-1.2, -0.3, 0.0, 0.5, 1.4]);
    let mut worst_z = 0.0f64;
    for (seed, width, rate) in [(3u64, 4usize, 0.15), (8, 6, 0.3), (21, 10, 0.5)] {
        // Nonzero biases so dropped units change the output.
        let mut params = init_mlp(&[1, width, width, 1], &mut RandomStream::new(seed)).unwrap();
        let mut s = RandomStream::new(seed + 1);
        for l in 0..3 {
            for b in params.bias_mut(l) {
                *b = 0.5 * s.normal();
            }
        }
        let exact = enumerate_mask_expectation(&params, rate, &x);
        let dropout = DropoutConfig {
            rate,
            ..DropoutConfig::default()
        };
        let g = mc_predict(&params, &x, &Standardizer::identity(1), &dropout, passes, &RandomStream::new(seed)).unwrap();
        for i in 0..x.rows() {
            let se = g.std[i] / (passes as f64).sqrt();
            worst_z = worst_z.max((g.mean[i] - exact[i]).abs() / se);
        }
    }
    let params = init_mlp(&[1, 10, 10, 1], &mut RandomStream::new(4)).unwrap();
    let zero = DropoutConfig {
        rate: 0.0,
        ..DropoutConfig::default()
    };
    let g = mc_predict(&params, &x, &Standardizer::identity(1), &zero, 100, &RandomStream::new(0)).unwrap();
    let zero_std = g.std.iter().all(|s| *s == 0.0);
    let elapsed = t.elapsed();
    check(
        worst_z < 3.0 && zero_std && within(elapsed, 30.0),
        format!("max |mean − exact| = {worst_z:.2} standard errors at T={passes}; p=0 std ≡ 0: {zero_std}; {elapsed:.1?}"),
    )
}

struct StdNormal;

impl LogDensity for StdNormal {
    fn dim(&self) -> usize {
        2
    }
    fn log_density_and_grad(&self, q: &[f64]) -> uqbench_core::Result<(f64, Vec<f64>)> {
        Ok((-0.5 * dot(q, q), q.iter().map(|v| -v).collect()))
    }
}

/// `y = a + b·x + ε` with known σ and prior `(a, b) ~ N(0, I)`.
struct ConjugateLine {
    x: Vec<f64>,
    y: Vec<f64>,
    sigma: f64,
}

impl ConjugateLine {
    /// Posterior mean and covariance from the 2×2 normal equations.
    fn posterior(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let s2 = self.sigma * self.sigma;
        let n = self.x.len() as f64;
        let sx: f64 = self.x.iter().sum();
        let sxx = dot(&self.x, &self.x);
        let p = [[1.0 + n / s2, sx / s2], [sx / s2, 1.0 + sxx / s2]];
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        let cov = [[p[1][1] / det, -p[0][1] / det], [-p[1][0] / det, p[0][0] / det]];
        let r = [self.y.iter().sum::<f64>() / s2, dot(&self.x, &self.y) / s2];
        let mean = [cov[0][0] * r[0] + cov[0][1] * r[1], cov[1][0] * r[0] + cov[1][1] * r[1]];
        (mean, cov)
    }
}

impl LogDensity for ConjugateLine {
    fn dim(&self) -> usize {
        2
    }
    fn log_density_and_grad(&self, q: &[f64]) -> uqbench_core::Result<(f64, Vec<f64>)> {
        let s2 = self.sigma * self.sigma;
        let mut lp = -0.5 * dot(q, q);
        let mut g = vec![-q[0], -q[1]];
        for (x, y) in self.x.iter().zip(&self.y) {
            let r = y - q[0] - q[1] * x;
            lp -= 0.5 * r * r / s2;
            g[0] += r / s2;
            g[1] += r * x / s2;
        }
        Ok((lp, g))
    }
}

fn moments(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64)
}

fn c3_nuts_oracle() -> Outcome {
    let t = Instant::now();
    let draws = nuts_sample(
        &StdNormal,
        &NutsConfig {
            samples: 4000,
            seed: 21,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let mut normal_ok = true;
    let mut detail = String::new();
    for j in 0..2 {
        let chains = draws.chains_of(j);
        let ess = effective_sample_size(&chains);
        let (m, v) = moments(&chains[0]);
        let se = (v / ess).sqrt();
        normal_ok &= m.abs() < 3.0 * se && (v - 1.0).abs() < 0.1;
        detail += &format!("N(0,I) q{j}: mean {m:+.3} (3se {:.3}) var {v:.3}; ", 3.0 * se);
    }
    let mut s = RandomStream::new(77);
    let x: Vec<f64> = (0..40).map(|_| s.uniform_range(-1.0, 1.0)).collect();
    let y: Vec<f64> = x.iter().map(|x| 0.8 + 1.5 * x + 0.5 * s.normal()).collect();
    let target = ConjugateLine { x, y, sigma: 0.5 };
    let (mean, cov) = target.posterior();
    let draws = nuts_sample(
        &target,
        &NutsConfig {
            samples: 16_000,
            seed: 3,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let mut conj_ok = true;
    for j in 0..2 {
        let (m, v) = moments(&draws.chains_of(j)[0]);
        let (em, ev) = ((m - mean[j]).abs() / mean[j].abs(), (v / cov[j][j] - 1.0).abs());
        conj_ok &= em < 0.05 && ev < 0.05;
        detail += &format!("conjugate w{j}: mean err {:.2}% var err {:.2}%; ", 100.0 * em, 100.0 * ev);
    }
    let elapsed = t.elapsed();
    check(normal_ok && conj_ok && within(elapsed, 60.0), format!("{detail}{elapsed:.1?}"))
}

fn c4_gradients() -> Outcome {
    let sizes = [2, 8, 6, 1];
    let mut s = RandomStream::new(404);
    let x = DenseMatrix::from_vec(10, 2, (0..20).map(|_| s.uniform_range(-2.0, 2.0)).collect()).unwrap();
    let y: Vec<f64> = (0..10).map(|_| s.normal()).collect();
    let mut worst_mlp = 0.0f64;
    for point in 0..60 {
        let values = (0..param_count(&sizes)).map(|_| 0.7 * s.normal()).collect();
        let params = MlpParams::from_values(&sizes, values).unwrap();
        let masks = (point % 2 == 0).then(|| DropoutMasks::sample(&params, 0.2, 10, &mut s));
        let (_, grad) = loss_and_grad(&params, &x, &y, 1e-4, masks.as_ref()).unwrap();
        let fd = central_diff(
            |v| loss_and_grad(&MlpParams::from_values(&sizes, v.to_vec()).unwrap(), &x, &y, 1e-4, masks.as_ref()).unwrap().0,
            params.values(),
            1e-6,
        );
        worst_mlp = worst_mlp.max(relative_error(grad.values(), &fd, 1e-8));
    }
    let model = BnnModel::new(1, 16);
    let d = DataRecipe::one_d(50, 0.05, 9).generate();
    let (bx, by) = (d.standardized_inputs(), d.standardized_targets());
    let mut worst_bnn = 0.0f64;
    for _ in 0..60 {
        let theta: Vec<f64> = (0..model.dim()).map(|_| s.normal()).collect();
        let (_, grad) = model.log_posterior(&theta, &bx, &by).unwrap();
        let fd = central_diff(|t| model.log_posterior(t, &bx, &by).unwrap().0, &theta, 1e-5);
        worst_bnn = worst_bnn.max(relative_error(&grad, &fd, 1e-8));
    }
    check(
        worst_mlp < 1e-4 && worst_bnn < 1e-5,
        format!("60 points each: MLP max relative error {worst_mlp:.1e}, BNN {worst_bnn:.1e}"),
    )
}

const FIG1_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn median_of(report: &ExperimentReport, method: Method, f: impl Fn(&Metrics) -> f64) -> Result<f64, String> {
    let values: Vec<f64> = report
        .cells
        .iter()
        .filter(|c| c.method == method)
        .map(|c| c.metrics().map(&f).ok_or_else(|| format!("{method} seed {} failed: {:?}", c.seed, c.outcome)))
        .collect::<Result<_, _>>()?;
    Ok(median(&values))
}

fn one_d_config(sigma: f64, methods: &[Method]) -> ExperimentConfig {
    ExperimentConfig {
        name: "acceptance".into(),
        task: Task::OneD,
        noise: NoiseProfile::constant(sigma),
        runs: methods.iter().map(|m| (*m, 50)).collect(),
        seeds: FIG1_SEEDS.to_vec(),
        settings: Settings::default(),
    }
}

fn c5_fig1_ratios(cache: &mut Cache) -> Outcome {
    let t = Instant::now();
    let report = run_experiment(&one_d_config(0.05, &Method::ALL)).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let rho = |m| median_of(&report, m, |x| x.rho);
    let (gp, mcd, bnn) = (rho(Method::Gp)?, rho(Method::Mcd)?, rho(Method::Bnn)?);
    cache.fig1 = Some(report);
    check(
        gp >= 1.3 && bnn >= 1.3 && mcd <= gp - 0.2 && within(elapsed, 600.0),
        format!("median ρ over 5 seeds: GP {gp:.3}, BNN {bnn:.3}, MCD {mcd:.3}; {elapsed:.1?}"),
    )
}

fn c6_noise_response(cache: &mut Cache) -> Outcome {
    let low = match cache.fig1.take() {
        Some(r) => r,
        None => run_experiment(&one_d_config(0.05, &[Method::Gp, Method::Mcd])).map_err(|e| e.to_string())?,
    };
    let high = run_experiment(&one_d_config(0.2, &[Method::Gp, Method::Mcd])).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut detail = String::new();
    for m in [Method::Gp, Method::Mcd] {
        let std = |r: &ExperimentReport| median_of(r, m, |x| x.mean_std.data.unwrap_or(f64::NAN));
        let (a, b) = (std(&low)?, std(&high)?);
        ok &= b > a;
        detail += &format!("{m}: data-region std {a:.4} (σ=0.05) → {b:.4} (σ=0.2); ");
    }
    check(ok, format!("{detail}median over 5 seeds"))
}

fn c7_ensemble() -> Outcome {
    let settings = Settings::default();
    let seeds = ensemble_seeds(settings.seed, 4);
    let study = ensemble_study(&settings, Task::OneD, 50, NoiseProfile::constant(0.05), &seeds, true)
        .map_err(|e| e.to_string())?;
    let (ens, single) = (study.metrics.rho, study.median_member_rho());
    check(ens > single, format!("4-member ensemble ρ {ens:.3} vs median single-model ρ {single:.3}"))
}

fn c8_fig4() -> Outcome {
    let t = Instant::now();
    let config = Figure::Fig4.experiment(&Settings::default()).expect("fig4 is an experiment preset");
    let report = run_experiment(&config).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let metrics = |m| {
        report
            .cells
            .iter()
            .find(|c| c.method == m)
            .and_then(|c| c.metrics().cloned())
            .ok_or_else(|| format!("{m} cell failed"))
    };
    let (gp, mcd) = (metrics(Method::Gp)?, metrics(Method::Mcd)?);
    let ratio = |m: &Metrics| m.mean_std.gap.unwrap() / m.mean_std.data.unwrap();
    let (rg, rm) = (ratio(&gp), ratio(&mcd));
    let (res_in, res_out) = (mcd.abs_residual.gap.unwrap(), mcd.abs_residual.data.unwrap());
    check(
        rg >= 1.3 && rm <= rg && res_in > res_out && within(elapsed, 900.0),
        format!(
            "inside/outside std ratio GP {rg:.3}, MCD {rm:.3}; MCD |residual| inside {res_in:.4} vs outside {res_out:.4}; {elapsed:.1?}"
        ),
    )
}

fn c9_coverage() -> Outcome {
    let settings = Settings::default();
    let dataset = DataRecipe::one_d(150, 0.05, settings.data_seed).generate();
    let grid = settings.grid(Task::OneD);
    let fitted = fit_predict(Method::Gp, &dataset, &settings, settings.seed, &grid).map_err(|e| e.to_string())?;
    let truth = truth_on(&dataset, &grid).map_err(|e| e.to_string())?;
    let m = compute_metrics(&fitted.grid, &truth, &dataset.noise, &settings.regions(Task::OneD)).map_err(|e| e.to_string())?;
    let cov = m.coverage.data.unwrap_or(0.0);
    check(cov >= 0.85, format!("GP n=150 data-region coverage {:.1}%", 100.0 * cov))
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension().is_some_and(|x| x == "csv")).then(|| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        })
        .collect()
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("reduced.toml");
    let reduced = "gp_steps = 100\nmcd_epochs = 300\nmcd_passes = 100\nbnn_warmup = 60\nbnn_samples = 60\ngrid_points_1d = 120\n";
    fs::write(&config, reduced).map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("run{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_uqbench"))
            .args(["experiment", "--figure", "fig1", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("run {k} exited with {}: {}", status.status, String::from_utf8_lossy(&status.stderr)));
        }
        runs.push(csv_bytes(&out));
    }
    let identical = runs[0] == runs[1];
    check(
        identical && runs[0].len() >= 9,
        format!("{} CSV files per run, byte-identical: {identical}", runs[0].len()),
    )
}

fn c11_sweep() -> Outcome {
    let settings = Settings::default();
    let seeds: Vec<u64> = (0..100).collect();
    let t = Instant::now();
    let table = seed_sweep(&settings, Method::Mcd, Task::OneD, SWEEP_N, NoiseProfile::constant(SWEEP_SIGMA), &seeds)
        .map_err(|e| e.to_string())?;
    let text = sweep_text("sweep", &table, &settings);
    let (lo, hi) = table
        .rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.mse), b.max(r.mse)));
    let reference = format!("{}", REFERENCE_SWEEP_MSE.0);
    check(
        table.mse_mean.is_finite()
            && table.mse_mean > 0.0
            && table.mse_std > 0.0
            && hi > lo
            && table.rows.len() == 100
            && text.contains(&reference),
        format!(
            "MSE mean {:.4} std {:.4} over {} seeds (reference {} / {}); {:.1?}",
            table.mse_mean,
            table.mse_std,
            table.rows.len(),
            REFERENCE_SWEEP_MSE.0,
            REFERENCE_SWEEP_MSE.1,
            t.elapsed()
        ),
    )
}

#[derive(Default)]
struct Cache {
    fig1: Option<ExperimentReport>,
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut cache = Cache::default();
    let mut failed = 0;
    for n in 1..=11 {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match n {
            1 => c1_gp_oracle(),
            2 => c2_mcd_oracle(),
            3 => c3_nuts_oracle(),
            4 => c4_gradients(),
            5 => c5_fig1_ratios(&mut cache),
            6 => c6_noise_response(&mut cache),
            7 => c7_ensemble(),
            8 => c8_fig4(),
            9 => c9_coverage(),
            10 => c10_determinism(),
            _ => c11_sweep(),
        }))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {n}: PASS ({detail}) [{:.1?}]", t.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL ({detail}) [{:.1?}]", t.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}

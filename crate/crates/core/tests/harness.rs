use std::fs;
use std::path::Path;

use proptest::prelude::*;
use uqbench_core::data::{NoiseProfile, Standardizer, Task};
use uqbench_core::gp::{GpHyper, GpPosterior};
use uqbench_core::harness::report::write_experiment;
use uqbench_core::harness::*;
use uqbench_core::linalg::DenseMatrix;
use uqbench_core::mcd::ensemble_combine;
use uqbench_core::predictive::{line_grid, PredictiveGrid};
use uqbench_core::rng::RandomStream;

fn quick() -> Settings {
    Settings {
        gp_steps: 30,
        mcd_epochs: 100,
        mcd_passes: 30,
        bnn_warmup: 30,
        bnn_samples: 30,
        bnn_hidden: 4,
        grid_points_1d: 80,
        ..Settings::default()
    }
}

fn regions() -> Regions {
    Regions::Line {
        gap_half_width: 0.5,
        data_outer: 1.3,
    }
}

/// Straight-line recomputation of the headline metrics.
fn naive_metrics(x: &[f64], mean: &[f64], std: &[f64], truth: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mse = mean.iter().zip(truth).map(|(m, t)| (m - t) * (m - t)).sum::<f64>() / n;
    let (mut gap, mut ng, mut data, mut nd) = (0.0, 0.0, 0.0, 0.0);
    let mut covered = 0.0;
    for i in 0..x.len() {
        if x[i].abs() < 0.5 {
            gap += std[i];
            ng += 1.0;
        } else if x[i].abs() <= 1.3 {
            data += std[i];
            nd += 1.0;
        }
        if (mean[i] - truth[i]).abs() <= 1.959963984540054 * std[i] {
            covered += 1.0;
        }
    }
    (mse, (gap / ng) / (data / nd), covered / n)
}

fn grid_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (8usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(0.01f64..2.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_match_naive_recomputation((mean, std, truth) in grid_strategy()) {
        let n = mean.len();
        let xs: Vec<f64> = (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect();
        let g = PredictiveGrid::new(DenseMatrix::column(&xs), mean.clone(), std.clone(), "t").unwrap();
        let m = compute_metrics(&g, &truth, &NoiseProfile::constant(0.1), &regions()).unwrap();
        let (mse, rho, cov) = naive_metrics(&xs, &mean, &std, &truth);
        prop_assert!((m.mse - mse).abs() <= 1e-12 * mse.max(1.0));
        prop_assert!((m.rho - rho).abs() <= 1e-12 * rho);
        prop_assert!((m.coverage_all - cov).abs() < 1e-12);
    }

    #[test]
    fn rho_is_invariant_to_std_scale((mean, std, truth) in grid_strategy(), c in 0.1f64..10.0) {
        let n = mean.len();
        let x = line_grid(-2.0, 2.0, n);
        let a = PredictiveGrid::new(x.clone(), mean.clone(), std.clone(), "a").unwrap();
        let b = PredictiveGrid::new(x, mean, std.iter().map(|s| c * s).collect(), "b").unwrap();
        let ma = compute_metrics(&a, &truth, &NoiseProfile::constant(0.1), &regions()).unwrap();
        let mb = compute_metrics(&b, &truth, &NoiseProfile::constant(0.1), &regions()).unwrap();
        prop_assert!((ma.rho - mb.rho).abs() <= 1e-12 * ma.rho);
        prop_assert_eq!(ma.mse, mb.mse);
    }

    #[test]
    fn bands_bracket_the_mean((mean, std, _t) in grid_strategy()) {
        let g = PredictiveGrid::new(line_grid(0.0, 1.0, mean.len()), mean, std, "t").unwrap();
        for i in 0..g.len() {
            prop_assert!(g.lower[i] <= g.mean[i] && g.mean[i] <= g.upper[i]);
        }
    }

    #[test]
    fn ensemble_of_copies_is_the_member((mean, std, _t) in grid_strategy(), k in 2usize..5) {
        let g = PredictiveGrid::new(line_grid(0.0, 1.0, mean.len()), mean, std, "t").unwrap();
        let combined = ensemble_combine(&vec![g.clone(); k]).unwrap();
        for i in 0..g.len() {
            prop_assert!((combined.mean[i] - g.mean[i]).abs() < 1e-12);
            prop_assert!((combined.std[i] - g.std[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_variance_dominates_mean_member_variance(
        (m1, s1, m2) in grid_strategy(),
    ) {
        let x = line_grid(0.0, 1.0, m1.len());
        let a = PredictiveGrid::new(x.clone(), m1, s1.clone(), "a").unwrap();
        let b = PredictiveGrid::new(x, m2, s1.iter().rev().copied().collect(), "b").unwrap();
        let c = ensemble_combine(&[a.clone(), b.clone()]).unwrap();
        for i in 0..c.len() {
            let mean_var = 0.5 * (a.std[i].powi(2) + b.std[i].powi(2));
            prop_assert!(c.std[i].powi(2) >= mean_var * (1.0 - 1e-12));
        }
    }

    #[test]
    fn gp_variance_lies_between_zero_and_prior(
        xs in prop::collection::vec(-2.0f64..2.0, 1..15),
        ell in 0.2f64..2.0,
        sf2 in 0.1f64..3.0,
        sn2 in 1e-4f64..0.5,
    ) {
        let y: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let post = GpPosterior::from_standardized(DenseMatrix::column(&xs), &y, GpHyper::new(ell, sf2, sn2), Standardizer::identity(1)).unwrap();
        let (_, var) = post.predict_standardized(&line_grid(-3.0, 3.0, 25), false).unwrap();
        for v in var {
            prop_assert!((0.0..=sf2 * (1.0 + 1e-12)).contains(&v));
        }
    }

    #[test]
    fn forks_do_not_depend_on_parent_position(seed in any::<u64>(), label in any::<u64>(), skip in 0usize..20) {
        let a = RandomStream::new(seed);
        let mut b = RandomStream::new(seed);
        for _ in 0..skip {
            b.next_u64();
        }
        prop_assert_eq!(a.fork(label).next_u64(), b.fork(label).next_u64());
    }
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn written_experiment_is_byte_identical_across_runs() {
    let settings = quick();
    let config = Figure::Fig2.experiment(&settings).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.failures(), 0);
        write_experiment(&report, d.path()).unwrap();
    }
    let (a, b) = (read_dir_bytes(dirs[0].path()), read_dir_bytes(dirs[1].path()));
    assert!(a.len() >= 8);
    assert_eq!(a, b);
}

#[test]
fn reduced_fig2_reports_every_method() {
    let report = run_experiment(&Figure::Fig2.experiment(&quick()).unwrap()).unwrap();
    assert_eq!(report.cells.len(), 3);
    for c in &report.cells {
        let m = c.metrics().unwrap_or_else(|| panic!("{} failed: {:?}", c.method, c.outcome));
        assert!(m.mse.is_finite() && m.rho.is_finite() && m.rho > 0.0);
        // The default grid spans the training support only.
        assert_eq!(m.mean_std.extrapolation, None);
    }
    let dir = tempfile::tempdir().unwrap();
    let files = write_experiment(&report, dir.path()).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    let text = fs::read_to_string(dir.path().join("fig2_report.txt")).unwrap();
    assert!(text.contains("mean_std_error") && text.contains("rho"));
}

#[test]
fn ensemble_matches_pooled_samples() {
    let mut s = RandomStream::new(12);
    let (points, per_member) = (7, 50);
    let x = line_grid(0.0, 1.0, points);
    let mut pooled = vec![Vec::new(); points];
    let mut grids = Vec::new();
    for k in 0..4 {
        let samples: Vec<Vec<f64>> = (0..points)
            .map(|_| (0..per_member).map(|_| k as f64 + 2.0 * s.normal()).collect())
            .collect();
        let mean: Vec<f64> = samples.iter().map(|v| v.iter().sum::<f64>() / per_member as f64).collect();
        let std: Vec<f64> = samples
            .iter()
            .zip(&mean)
            .map(|(v, m)| (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / per_member as f64).sqrt())
            .collect();
        for (p, v) in pooled.iter_mut().zip(samples) {
            p.extend(v);
        }
        grids.push(PredictiveGrid::new(x.clone(), mean, std, "m").unwrap());
    }
    let combined = ensemble_combine(&grids).unwrap();
    for (i, p) in pooled.iter().enumerate() {
        let m = p.iter().sum::<f64>() / p.len() as f64;
        let var = p.iter().map(|a| (a - m).powi(2)).sum::<f64>() / p.len() as f64;
        assert!((combined.mean[i] - m).abs() < 1e-12);
        assert!((combined.std[i].powi(2) - var).abs() < 1e-12, "{} vs {var}", combined.std[i].powi(2));
    }
}

#[test]
fn ensemble_study_combines_members() {
    let seeds = ensemble_seeds(3, 3);
    let study = ensemble_study(&quick(), Task::OneD, 30, NoiseProfile::constant(0.05), &seeds, true).unwrap();
    assert_eq!(study.members.len(), 3);
    let grids: Vec<_> = study.members.iter().map(|m| m.grid.clone()).collect();
    let again = ensemble_combine(&grids).unwrap();
    assert_eq!(again.mean, study.combined.mean);
    for i in 0..study.combined.len() {
        let mean_var = grids.iter().map(|g| g.std[i].powi(2)).sum::<f64>() / 3.0;
        assert!(study.combined.std[i].powi(2) >= mean_var * (1.0 - 1e-12));
    }
    assert!(ensemble_study(&quick(), Task::OneD, 30, NoiseProfile::constant(0.05), &seeds[..1], true).is_err());
}

#[test]
fn sweep_keeps_data_fixed_and_varies_models() {
    let t = seed_sweep(&quick(), Method::Mcd, Task::OneD, 40, NoiseProfile::constant(0.05), &[1, 2, 3]).unwrap();
    assert_eq!(t.rows.len(), 3);
    assert!(t.mse_std > 0.0);
    let single = seed_sweep(&quick(), Method::Mcd, Task::OneD, 40, NoiseProfile::constant(0.05), &[2]).unwrap();
    assert!(single.single_seed && single.mse_std == 0.0);
    assert_eq!(single.rows[0], t.rows[1]);
}

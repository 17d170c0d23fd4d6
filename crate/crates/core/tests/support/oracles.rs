//! Independent reference implementations used by the integration and acceptance tests.
#![allow(dead_code)]

use uqbench_core::linalg::DenseMatrix;
use uqbench_core::mlp::{forward, Activation, DropoutMasks, Mask, MlpParams};

/// Gauss-Jordan inverse with partial pivoting and the log-determinant.
pub fn dense_inverse(a: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| f64::from(u8::from(i == j))));
            r
        })
        .collect();
    let mut log_det = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        log_det += p.abs().ln();
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    (m.into_iter().map(|r| r[n..].to_vec()).collect(), log_det)
}

pub fn rbf_scalar(a: &[f64], b: &[f64], ell: f64, sf2: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    sf2 * (-d2 / (2.0 * ell * ell)).exp()
}

fn rows(x: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..x.rows()).map(|i| x.row(i).to_vec()).collect()
}

fn kernel_plus_noise(x: &[Vec<f64>], ell: f64, sf2: f64, sn2: f64) -> Vec<Vec<f64>> {
    x.iter()
        .enumerate()
        .map(|(i, a)| {
            x.iter()
                .enumerate()
                .map(|(j, b)| rbf_scalar(a, b, ell, sf2) + if i == j { sn2 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Latent predictive mean and variance from an explicit inverse of `K + σ_n²I`.
pub fn dense_gp_predict(x: &DenseMatrix, y: &[f64], xs: &DenseMatrix, ell: f64, sf2: f64, sn2: f64) -> (Vec<f64>, Vec<f64>) {
    let xr = rows(x);
    let (kinv, _) = dense_inverse(&kernel_plus_noise(&xr, ell, sf2, sn2));
    let mut mean = Vec::new();
    let mut var = Vec::new();
    for s in rows(xs) {
        let k: Vec<f64> = xr.iter().map(|a| rbf_scalar(a, &s, ell, sf2)).collect();
        let kinv_k: Vec<f64> = kinv.iter().map(|row| row.iter().zip(&k).map(|(p, q)| p * q).sum()).collect();
        mean.push(kinv_k.iter().zip(y).map(|(p, q)| p * q).sum());
        var.push(sf2 - kinv_k.iter().zip(&k).map(|(p, q)| p * q).sum::<f64>());
    }
    (mean, var)
}

/// `½yᵀK⁻¹y + ½log|K| + (n/2)log 2π` with an explicit inverse.
pub fn dense_nlml(x: &DenseMatrix, y: &[f64], ell: f64, sf2: f64, sn2: f64) -> f64 {
    let (kinv, log_det) = dense_inverse(&kernel_plus_noise(&rows(x), ell, sf2, sn2));
    let quad: f64 = kinv
        .iter()
        .zip(y)
        .map(|(row, yi)| yi * row.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .sum();
    0.5 * quad + 0.5 * log_det + 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Central differences with step `h` in every coordinate.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}

/// Exact expectation of the dropout network output over every joint mask
/// of the hidden units, each unit kept independently with probability `1 − p`.
pub fn enumerate_mask_expectation(params: &MlpParams, rate: f64, x: &DenseMatrix) -> Vec<f64> {
    let widths = params.hidden_widths().to_vec();
    let total: usize = widths.iter().sum();
    assert!(total <= 24, "enumeration over {total} units is too large");
    let mut expectation = vec![0.0; x.rows()];
    for bits in 0u64..(1 << total) {
        let mut offset = 0;
        let mut weight = 1.0;
        let layers = widths
            .iter()
            .map(|&w| {
                let keep: Vec<f64> = (0..w)
                    .map(|u| {
                        let kept = bits >> (offset + u) & 1 == 1;
                        weight *= if kept { 1.0 - rate } else { rate };
                        f64::from(u8::from(kept))
                    })
                    .collect();
                offset += w;
                Mask { rows: 1, width: w, keep }
            })
            .collect();
        let masks = DropoutMasks { rate, layers };
        let out = forward(params, Activation::Relu, x, Some(&masks)).unwrap();
        for (e, o) in expectation.iter_mut().zip(out) {
            *e += weight * o;
        }
    }
    expectation
}

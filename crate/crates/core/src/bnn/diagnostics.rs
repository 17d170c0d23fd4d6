//! Convergence diagnostics over one scalar quantity drawn by several chains.
//! Both statistics split every chain into halves first.

fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    chains
        .iter()
        .flat_map(|c| {
            let c = &c[c.len() - 2 * n..];
            [&c[..n], &c[n..]]
        })
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split potential scale reduction factor. `NaN` if chains are shorter than
/// four draws; exactly 1 when every draw is identical.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    let n = parts.first().map_or(0, |p| p.len());
    if n < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = mean(&parts.iter().map(|p| sample_variance(p)).collect::<Vec<_>>());
    let b_over_n = sample_variance(&means);
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if w == 0.0 {
        return if var_plus == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (var_plus / w).sqrt()
}

/// Lag-`t` autocovariance with divisor `n`.
fn autocovariance(x: &[f64], m: f64, t: usize) -> f64 {
    let n = x.len();
    x[..n - t].iter().zip(&x[t..]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / n as f64
}

/// Effective sample size from Geyer's initial monotone sequence of summed
/// autocorrelation pairs, pooled across split chains.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    let n = parts.first().map_or(0, |p| p.len());
    if n < 4 {
        return f64::NAN;
    }
    let m = parts.len() as f64;
    let total = m * n as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let mean_acov = |t: usize| parts.iter().zip(&means).map(|(p, mu)| autocovariance(p, *mu, t)).sum::<f64>() / m;
    let nf = n as f64;
    let mean_var = mean_acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if parts.len() > 1 {
        var_plus += sample_variance(&means);
    }
    if var_plus == 0.0 {
        return total;
    }
    let rho_at = |t: usize| 1.0 - (mean_var - mean_acov(t)) / var_plus;

    let mut rho = vec![0.0; n + 1];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho_at(1);
    rho[1] = odd;
    let mut s = 1;
    while s + 4 < n && even + odd > 0.0 {
        even = rho_at(s + 1);
        odd = rho_at(s + 2);
        if even + odd >= 0.0 {
            rho[s + 1] = even;
            rho[s + 2] = odd;
        }
        s += 2;
    }
    let max_s = s;
    if even > 0.0 {
        rho[max_s + 1] = even;
    }
    let mut k = 1;
    while k + 3 <= max_s {
        if rho[k + 1] + rho[k + 2] > rho[k - 1] + rho[k] {
            rho[k + 1] = 0.5 * (rho[k - 1] + rho[k]);
            rho[k + 2] = rho[k + 1];
        }
        k += 2;
    }
    let tau = -1.0 + 2.0 * rho[..max_s].iter().sum::<f64>() + rho[max_s + 1];
    (total / tau).min(total * total.log10())
}

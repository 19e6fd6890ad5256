//! Kolmogorov–Smirnov statistics with asymptotic p-values.

use crate::error::{argument, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        // the alternating series converges slowly here and the value is 1 to double precision
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(argument("KS test needs nonempty samples"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(argument("KS samples contain NaN"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    Ok(v)
}

pub fn two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let a = sorted(a)?;
    let b = sorted(b)?;
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let lambda = (n * m / (n + m)).sqrt() * d;
    Ok(KsResult { statistic: d, p_value: kolmogorov_survival(lambda) })
}

pub fn one_sample<F: Fn(f64) -> f64>(a: &[f64], cdf: F) -> Result<KsResult> {
    let a = sorted(a)?;
    let n = a.len() as f64;
    let mut d: f64 = 0.0;
    for (k, &x) in a.iter().enumerate() {
        let f = cdf(x);
        d = d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n);
    }
    Ok(KsResult { statistic: d, p_value: kolmogorov_survival(n.sqrt() * d) })
}

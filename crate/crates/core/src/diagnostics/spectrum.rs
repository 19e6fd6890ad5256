//! Small-eigenvalue tails and truncated negative moments of the reduced
//! covariance `Q_t`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::engine::mean_and_se;
use crate::error::{argument, data, Result};
use crate::levy::least_squares_slope;

pub const MIN_TAIL_SAMPLES: usize = 1000;
pub const DEFAULT_CAP: f64 = 1e12;
/// Number of cap doublings in the sensitivity report.
pub const CAP_DOUBLINGS: usize = 4;
/// Relative change on the final doubling above which a moment counts as saturated.
pub const CAP_STABILITY: f64 = 0.05;

/// Rejects samples that are not symmetric positive semidefinite.
pub fn check_psd(samples: &[DMatrix<f64>]) -> Result<()> {
    for (k, q) in samples.iter().enumerate() {
        if !q.is_square() {
            return Err(data(format!("sample {k} is not square")));
        }
        let scale = q.amax().max(1.0);
        if (q - q.transpose()).amax() > 1e-12 * scale {
            return Err(data(format!("sample {k} is not symmetric")));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(data(format!("sample {k} has non-finite entries")));
        }
        let min = SymmetricEigen::new(q.clone()).eigenvalues.min();
        if min < -1e-12 * scale {
            return Err(data(format!("sample {k} has eigenvalue {min:e} < 0")));
        }
    }
    Ok(())
}

pub fn min_eigenvalue(q: &DMatrix<f64>) -> f64 {
    if q.nrows() == 1 {
        return q[(0, 0)];
    }
    SymmetricEigen::new(q.clone()).eigenvalues.min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailCurve {
    pub epsilons: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// 95% Wilson score interval per ε.
    pub wilson: Vec<(f64, f64)>,
    /// Log-log slope over points with `0 < P < 1` (0 when fewer than two).
    pub slope: f64,
    pub fitted_points: usize,
    /// `P ≡ 1` on the grid: no spread to speak of.
    pub degenerate: bool,
    pub samples: usize,
}

impl TailCurve {
    /// Whether `P` is nondecreasing in ε up to `k` standard errors.
    pub fn is_monotone(&self, k: f64) -> bool {
        (1..self.epsilons.len()).all(|i| {
            let tol = k * (self.standard_errors[i].powi(2) + self.standard_errors[i - 1].powi(2)).sqrt();
            self.probabilities[i] + tol >= self.probabilities[i - 1]
        })
    }
}

fn wilson(successes: usize, n: usize) -> (f64, f64) {
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Empirical `P(λ_min(Q) ≤ ε)` from precomputed minimal eigenvalues.
pub fn tail_from_minima(minima: &[f64], eps_grid: &[f64]) -> Result<TailCurve> {
    if minima.len() < MIN_TAIL_SAMPLES {
        return Err(argument(format!("tail estimate needs at least {MIN_TAIL_SAMPLES} samples, got {}", minima.len())));
    }
    if eps_grid.len() < 2 || eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) || eps_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(argument("ε grid must hold at least two positive, strictly increasing values"));
    }
    let mut sorted = minima.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let nf = n as f64;
    let mut probabilities = Vec::with_capacity(eps_grid.len());
    let mut standard_errors = Vec::with_capacity(eps_grid.len());
    let mut intervals = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let count = sorted.partition_point(|&v| v <= eps);
        let p = count as f64 / nf;
        probabilities.push(p);
        standard_errors.push((p * (1.0 - p) / nf).sqrt());
        intervals.push(wilson(count, n));
    }
    let pts: Vec<(f64, f64)> = eps_grid.iter().zip(&probabilities).filter(|(_, p)| **p > 0.0 && **p < 1.0).map(|(e, p)| (e.ln(), p.ln())).collect();
    let slope = if pts.len() >= 2 { least_squares_slope(&pts) } else { 0.0 };
    Ok(TailCurve {
        epsilons: eps_grid.to_vec(),
        degenerate: probabilities.iter().all(|p| *p == 1.0),
        probabilities,
        standard_errors,
        wilson: intervals,
        slope,
        fitted_points: pts.len(),
        samples: n,
    })
}

/// Gate-checked tail curve of `λ_min(Q)` over samples of `Q`.
pub fn eigen_tail(samples: &[DMatrix<f64>], eps_grid: &[f64]) -> Result<TailCurve> {
    check_psd(samples)?;
    let minima: Vec<f64> = samples.iter().map(min_eigenvalue).collect();
    tail_from_minima(&minima, eps_grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub order: f64,
    pub cap: f64,
    pub estimate: f64,
    pub standard_error: f64,
    /// `(cap · 2^k, estimate)` for `k = 0..=CAP_DOUBLINGS`.
    pub cap_curve: Vec<(f64, f64)>,
    /// Relative change of the estimate on the last doubling.
    pub final_relative_change: f64,
    /// Fraction of samples hitting the base cap.
    pub capped_fraction: f64,
    pub saturated: bool,
}

/// `E min(det^{-p}, cap)` from determinant samples.
pub fn negative_moment_from_dets(dets: &[f64], p: f64, cap: f64) -> Result<MomentEstimate> {
    if !(p >= 1.0) {
        return Err(argument(format!("moment order must be at least 1, got {p}")));
    }
    if !(cap > 0.0) {
        return Err(argument(format!("cap must be positive, got {cap}")));
    }
    if dets.is_empty() {
        return Err(argument("negative moment needs at least one sample"));
    }
    if let Some((k, d)) = dets.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
        return Err(data(format!("sample {k} has det(Q) = {d:e} ≤ 0")));
    }
    let inverse: Vec<f64> = dets.iter().map(|d| d.powf(-p)).collect();
    let at_cap = |c: f64| -> (f64, f64) {
        let clipped: Vec<f64> = inverse.iter().map(|v| v.min(c)).collect();
        mean_and_se(&clipped)
    };
    let cap_curve: Vec<(f64, f64)> = (0..=CAP_DOUBLINGS)
        .map(|k| {
            let c = cap * 2f64.powi(k as i32);
            (c, at_cap(c).0)
        })
        .collect();
    let (estimate, standard_error) = at_cap(cap);
    let last = cap_curve[CAP_DOUBLINGS].1;
    let before = cap_curve[CAP_DOUBLINGS - 1].1;
    let final_relative_change = (last - before).abs() / before.abs().max(f64::MIN_POSITIVE);
    let capped_fraction = inverse.iter().filter(|v| **v >= cap).count() as f64 / inverse.len() as f64;
    Ok(MomentEstimate {
        order: p,
        cap,
        estimate,
        standard_error,
        cap_curve,
        final_relative_change,
        capped_fraction,
        saturated: final_relative_change >= CAP_STABILITY,
    })
}

pub fn negative_moment(samples: &[DMatrix<f64>], p: f64, cap: f64) -> Result<MomentEstimate> {
    check_psd(samples)?;
    let dets: Vec<f64> = samples.iter().map(|q| q.determinant()).collect();
    negative_moment_from_dets(&dets, p, cap)
}

//! Gaussian kernel density estimates of one coordinate of `X_t`.

use statrs::function::erf::erfc;

use crate::error::{argument, Error, Result};

pub const MIN_KDE_SAMPLES: usize = 1000;
pub const DEFAULT_CLIP_QUANTILE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub bandwidth: f64,
    pub values: Vec<f64>,
    /// Pointwise Monte Carlo standard errors.
    pub standard_errors: Vec<f64>,
    pub samples: usize,
    /// Trapezoid integral of the estimate over the grid hull.
    pub grid_mass: f64,
    /// Kernel mass the full estimate puts on the grid hull.
    pub expected_mass: f64,
}

impl DensityEstimate {
    /// `|grid_mass − expected_mass|`.
    pub fn mass_defect(&self) -> f64 {
        (self.grid_mass - self.expected_mass).abs()
    }

    /// `max |f(c+r) − f(c−r)| / √(se₊² + se₋²)` over grid points mirrored
    /// about `center`. The grid must be symmetric about `center`.
    pub fn max_standardized_asymmetry(&self, center: f64) -> Result<f64> {
        let m = self.grid.len();
        let mut worst: f64 = 0.0;
        for k in 0..m / 2 {
            let (lo, hi) = (k, m - 1 - k);
            if ((self.grid[lo] - center) + (self.grid[hi] - center)).abs() > 1e-9 * (1.0 + center.abs()) {
                return Err(argument("grid is not symmetric about the center"));
            }
            let se = (self.standard_errors[lo].powi(2) + self.standard_errors[hi].powi(2)).sqrt();
            if se > 0.0 {
                worst = worst.max((self.values[lo] - self.values[hi]).abs() / se);
            }
        }
        Ok(worst)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `0.9 · min(sd, IQR/1.34) · N^{-1/5}` on the sample clipped to its
/// `[q, 1 − q]` quantile range.
pub fn default_bandwidth(samples: &[f64], clip: f64) -> Result<f64> {
    let mut sorted: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.len() < 2 {
        return Err(argument("bandwidth needs at least two finite samples"));
    }
    sorted.sort_by(|a, b| a.total_cmp(b));
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::Degenerate("all samples are identical (point mass)".into()));
    }
    let (lo, hi) = (quantile(&sorted, clip), quantile(&sorted, 1.0 - clip));
    let clipped: Vec<f64> = sorted.iter().copied().filter(|v| *v >= lo && *v <= hi).collect();
    let n = clipped.len() as f64;
    let mean = clipped.iter().sum::<f64>() / n;
    let sd = (clipped.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let iqr = quantile(&clipped, 0.75) - quantile(&clipped, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::Degenerate("clipped sample has no spread".into()));
    }
    Ok(0.9 * spread * n.powf(-0.2))
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn kde_density(samples: &[f64], grid: &[f64], clip: f64, bandwidth: Option<f64>) -> Result<DensityEstimate> {
    if samples.len() < MIN_KDE_SAMPLES {
        return Err(argument(format!("density estimate needs at least {MIN_KDE_SAMPLES} samples, got {}", samples.len())));
    }
    if !(0.0..0.5).contains(&clip) {
        return Err(argument(format!("clip quantile must lie in [0, 0.5), got {clip}")));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(argument("evaluation grid must hold at least two increasing points"));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 => {
            if samples.iter().all(|v| *v == samples[0]) {
                return Err(Error::Degenerate("all samples are identical (point mass)".into()));
            }
            h
        }
        Some(h) => return Err(argument(format!("bandwidth must be positive, got {h}"))),
        None => default_bandwidth(samples, clip)?,
    };
    let n = samples.len() as f64;
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    let mut values = Vec::with_capacity(grid.len());
    let mut standard_errors = Vec::with_capacity(grid.len());
    for &g in grid {
        let (mut s1, mut s2) = (0.0, 0.0);
        for &x in samples {
            let z = (g - x) / h;
            if z.abs() < 40.0 {
                let k = norm * (-0.5 * z * z).exp();
                s1 += k;
                s2 += k * k;
            }
        }
        let mean = s1 / n;
        values.push(mean);
        standard_errors.push(((s2 / n - mean * mean).max(0.0) / n).sqrt());
    }
    let grid_mass = grid.windows(2).zip(values.windows(2)).map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1])).sum();
    let (a, b) = (grid[0], grid[grid.len() - 1]);
    let expected_mass = samples.iter().map(|x| normal_cdf((b - x) / h) - normal_cdf((a - x) / h)).sum::<f64>() / n;
    Ok(DensityEstimate { grid: grid.to_vec(), bandwidth: h, values, standard_errors, samples: samples.len(), grid_mass, expected_mass })
}

/// `count` evenly spaced points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![lo];
    }
    (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect()
}

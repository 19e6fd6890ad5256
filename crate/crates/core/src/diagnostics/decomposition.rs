//! Two-sample test of `σW_{S_t} = σW_{S'_t} + σH_t` in law.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ks::{two_sample, KsResult};
use crate::error::{argument, Result};
use crate::levy::{decompose_large_jumps, DecompositionSpec, LevyMeasureSpec, SubordinatorSampler};
use crate::rng::{self, derive_seed, streams};

pub const MIN_DECOMPOSITION_SAMPLES: usize = 1000;
pub const KS_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    /// One KS result per coordinate of `σ·`.
    pub ks: Vec<KsResult>,
    /// `λ₁ = ν_S([1, ∞))`.
    pub large_jump_rate: f64,
    /// Mean of `N'_t` on the right-hand side.
    pub mean_jump_count: f64,
    pub samples: usize,
}

impl DecompositionReport {
    pub fn min_p_value(&self) -> f64 {
        self.ks.iter().map(|k| k.p_value).fold(1.0, f64::min)
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.ks.iter().all(|k| k.p_value >= threshold)
    }
}

fn gaussian<R: Rng + ?Sized>(d: usize, variance: f64, rng: &mut R) -> DVector<f64> {
    let scale = variance.sqrt();
    DVector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// `σ W_{S_t}` with `S_t` from the full measure.
fn left_samples(spec: &LevyMeasureSpec, sigma: &DMatrix<f64>, t: f64, samples: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let sampler = SubordinatorSampler::new(spec)?;
    let mut rng_s = rng::stream_rng(seed, streams::SUBORDINATOR);
    let mut rng_w = rng::stream_rng(seed, streams::BROWNIAN);
    Ok((0..samples)
        .map(|_| {
            let s = sampler.sample_value(t, &mut rng_s);
            sigma * gaussian(sigma.ncols(), s, &mut rng_w)
        })
        .collect())
}

/// `σ (W_{S'_t} + H_t)` and the jump counts of `H`.
fn right_samples(decomp: &DecompositionSpec, sigma: &DMatrix<f64>, t: f64, samples: usize, seed: u64) -> Result<(Vec<DVector<f64>>, Vec<u64>)> {
    let sampler = SubordinatorSampler::new(&decomp.truncated)?;
    let d = sigma.ncols();
    let mut rng_s = rng::stream_rng(seed, streams::SUBORDINATOR);
    let mut rng_w = rng::stream_rng(seed, streams::BROWNIAN);
    let mut rng_h = rng::stream_rng(seed, streams::LARGE_JUMPS);
    let mut counts = Vec::with_capacity(samples);
    let values = (0..samples)
        .map(|_| {
            let s = sampler.sample_value(t, &mut rng_s);
            let (h, count) = decomp.sample_compound(t, d, &mut rng_h);
            counts.push(count);
            sigma * (gaussian(d, s, &mut rng_w) + h)
        })
        .collect();
    Ok((values, counts))
}

fn coordinate_tests(left: &[DVector<f64>], right: &[DVector<f64>], n: usize) -> Result<Vec<KsResult>> {
    (0..n)
        .map(|c| {
            let a: Vec<f64> = left.iter().map(|v| v[c]).collect();
            let b: Vec<f64> = right.iter().map(|v| v[c]).collect();
            two_sample(&a, &b)
        })
        .collect()
}

fn check_inputs(sigma: &DMatrix<f64>, t: f64, samples: usize) -> Result<()> {
    if samples < MIN_DECOMPOSITION_SAMPLES {
        return Err(argument(format!("need at least {MIN_DECOMPOSITION_SAMPLES} samples per side, got {samples}")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(argument(format!("time must be positive, got {t}")));
    }
    if sigma.is_empty() {
        return Err(argument("σ must be nonempty"));
    }
    Ok(())
}

/// Draws `samples` values of each side independently and runs a KS test per
/// coordinate.
pub fn decomposition_ks_test(spec: &LevyMeasureSpec, sigma: &DMatrix<f64>, t: f64, samples: usize, seed: u64) -> Result<DecompositionReport> {
    check_inputs(sigma, t, samples)?;
    let decomp = decompose_large_jumps(spec)?;
    let left = left_samples(spec, sigma, t, samples, derive_seed(seed, 0))?;
    let (right, counts) = right_samples(&decomp, sigma, t, samples, derive_seed(seed, 1))?;
    Ok(DecompositionReport {
        ks: coordinate_tests(&left, &right, sigma.nrows())?,
        large_jump_rate: decomp.large_jump_rate,
        mean_jump_count: counts.iter().sum::<u64>() as f64 / samples as f64,
        samples,
    })
}

/// Same recipe (the left side) on both sides with independent seeds.
pub fn decomposition_self_test(spec: &LevyMeasureSpec, sigma: &DMatrix<f64>, t: f64, samples: usize, seed: u64) -> Result<DecompositionReport> {
    check_inputs(sigma, t, samples)?;
    let decomp = decompose_large_jumps(spec)?;
    let left = left_samples(spec, sigma, t, samples, derive_seed(seed, 0))?;
    let right = left_samples(spec, sigma, t, samples, derive_seed(seed, 1))?;
    Ok(DecompositionReport { ks: coordinate_tests(&left, &right, sigma.nrows())?, large_jump_rate: decomp.large_jump_rate, mean_jump_count: f64::NAN, samples })
}

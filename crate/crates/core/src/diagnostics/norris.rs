//! Joint probability of the two events of the Norris-type estimate on a
//! frozen-regime window.

use nalgebra::{DMatrix, DVector};

use crate::engine::run_indexed;
use crate::error::{argument, Result};
use crate::flows::evolve_flows;
use crate::hormander::{build_brackets, BracketMode, BracketSet};
use crate::model::ModelSpec;
use crate::rng::derive_seed;
use crate::sde::{frozen_regime_path, simulate_path, SimulationSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct NorrisParams {
    pub regime: usize,
    pub t1: f64,
    pub t2: f64,
    /// Test field `V = B_level`; the bracket `[b, V]` is `B_{level+1}`.
    pub level: usize,
    pub beta: f64,
    pub theta: f64,
    pub epsilons: Vec<f64>,
}

impl NorrisParams {
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if !(0.0 <= self.t1 && self.t1 < self.t2 && self.t2 <= 1.0) {
            return Err(argument(format!("window [{}, {}] must satisfy 0 ≤ t1 < t2 ≤ 1", self.t1, self.t2)));
        }
        let lower = (4.0 * self.theta - 7.0).max(0.0);
        if !(self.beta > lower && self.beta < 1.0) {
            return Err(argument(format!("beta = {} must lie in ({lower}, 1) for theta = {}", self.beta, self.theta)));
        }
        if self.regime >= model.rates.states() {
            return Err(argument(format!("regime {} out of range", self.regime)));
        }
        if self.level == 0 {
            return Err(argument("field level must be at least 1"));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(argument("ε grid must be nonempty and positive"));
        }
        Ok(())
    }

    /// Exponent `(1 − β)/(18 − β)` of the lower threshold.
    pub fn exponent(&self) -> f64 {
        (1.0 - self.beta) / (18.0 - self.beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NorrisReport {
    pub epsilons: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Sample means of `∫|v*K[b,V]|²` and `∫|v*K V|²`.
    pub mean_bracket_integral: f64,
    pub mean_field_integral: f64,
    pub samples: usize,
}

impl NorrisReport {
    /// Whether the probability does not increase as ε decreases, up to `k`
    /// standard errors. Grid order is irrelevant.
    pub fn is_monotone(&self, k: f64) -> bool {
        let mut idx: Vec<usize> = (0..self.epsilons.len()).collect();
        idx.sort_by(|a, b| self.epsilons[*a].total_cmp(&self.epsilons[*b]));
        idx.windows(2).all(|w| {
            let (small, large) = (w[0], w[1]);
            let tol = k * (self.standard_errors[small].powi(2) + self.standard_errors[large].powi(2)).sqrt();
            self.probabilities[small] <= self.probabilities[large] + tol
        })
    }
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times.windows(2).zip(values.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum()
}

/// `(∫|v*K[b,V]|², ∫|v*K V|²)` for one path.
fn window_integrals(model: &ModelSpec, brackets: &BracketSet, params: &NorrisParams, v: &DVector<f64>, sim: &SimulationSpec, seed: u64) -> Result<(f64, f64)> {
    let sim = SimulationSpec { horizon: params.t2, step: sim.step.min(params.t2), extra_times: vec![params.t1], ..sim.clone() };
    let path = simulate_path(model, &sim, seed)?;
    let noise = path.noise()?;
    let a = noise.node_of(params.t1)?;
    let flows = evolve_flows(model, &path)?;
    let frozen = frozen_regime_path(model, params.regime, params.t1, params.t2, &path.x[a], noise)?;
    let n = model.n();
    let i = params.regime;
    let mut k = flows.k[a].clone();
    let mut grad = DMatrix::zeros(n, n);
    let mut g1 = Vec::with_capacity(frozen.x.len());
    let mut g2 = Vec::with_capacity(frozen.x.len());
    for (idx, x) in frozen.x.iter().enumerate() {
        let vk = k.transpose() * v;
        g1.push((brackets.eval(params.level + 1, x, i).transpose() * &vk).norm_squared());
        g2.push((brackets.eval(params.level, x, i).transpose() * &vk).norm_squared());
        if idx + 1 < frozen.x.len() {
            model.drift.jacobian_into(x, i, &mut grad);
            let dt = frozen.times[idx + 1] - frozen.times[idx];
            k -= &k * &grad * dt;
        }
    }
    Ok((trapezoid(&frozen.times, &g1), trapezoid(&frozen.times, &g2)))
}

/// Empirical `P(∫|v*K[b,V]|² ≥ ε^{(1−β)/(18−β)}, ∫|v*K V|² ≤ ε)` per ε.
pub fn norris_joint_probability(
    model: &ModelSpec,
    params: &NorrisParams,
    v: &DVector<f64>,
    sim: &SimulationSpec,
    samples: usize,
    seed: u64,
    workers: usize,
) -> Result<NorrisReport> {
    params.validate(model)?;
    if v.len() != model.n() || (v.norm() - 1.0).abs() > 1e-9 {
        return Err(argument("v must be a unit vector in ℝⁿ"));
    }
    if samples == 0 {
        return Err(argument("sample count must be positive"));
    }
    let brackets = build_brackets(model, params.level + 1, BracketMode::Auto)?;
    let integrals = run_indexed(workers, samples, |s| window_integrals(model, &brackets, params, v, sim, derive_seed(seed, s as u64)))?;
    let gamma = params.exponent();
    let nf = samples as f64;
    let mut probabilities = Vec::with_capacity(params.epsilons.len());
    let mut standard_errors = Vec::with_capacity(params.epsilons.len());
    for &eps in &params.epsilons {
        let hits = integrals.iter().filter(|(i1, i2)| *i1 >= eps.powf(gamma) && *i2 <= eps).count();
        let p = hits as f64 / nf;
        probabilities.push(p);
        standard_errors.push((p * (1.0 - p) / nf).sqrt());
    }
    Ok(NorrisReport {
        epsilons: params.epsilons.clone(),
        probabilities,
        standard_errors,
        mean_bracket_integral: integrals.iter().map(|p| p.0).sum::<f64>() / nf,
        mean_field_integral: integrals.iter().map(|p| p.1).sum::<f64>() / nf,
        samples,
    })
}

//! Euler integration of the coupled pair `(X_t, α_t)` against a stored
//! noise record, with perturbed and frozen-regime variants.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{argument, data, Error, Result};
use crate::levy::{cumulate, uniform_grid, LevyMeasureSpec, SubordinatorSampler};
use crate::model::ModelSpec;
use crate::rng::{self, streams};
use crate::switching::{next_state, sample_events, PrmEventStream};

/// States with a larger norm abort the path.
pub const OVERFLOW_NORM: f64 = 1e12;

/// Initial condition, horizon, grid step and driver of a simulation.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub x0: DVector<f64>,
    pub regime0: usize,
    pub horizon: f64,
    pub step: f64,
    pub levy: LevyMeasureSpec,
    /// Extra grid nodes (e.g. window endpoints) merged into the grid.
    pub extra_times: Vec<f64>,
}

impl SimulationSpec {
    pub fn new(x0: DVector<f64>, regime0: usize, horizon: f64, step: f64, levy: LevyMeasureSpec) -> Self {
        Self { x0, regime0, horizon, step, levy, extra_times: Vec::new() }
    }

    pub fn with_extra_times(mut self, times: Vec<f64>) -> Self {
        self.extra_times = times;
        self
    }
}

/// Every random input of one path: grid, subordinator increments, Brownian
/// increments on the subordinated clock and PRM events.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecord {
    pub times: Vec<f64>,
    /// `ΔS_k = S_{t_{k+1}} − S_{t_k}`.
    pub ds: Vec<f64>,
    /// `S_{t_k}`.
    pub s: Vec<f64>,
    pub d: usize,
    /// `W_{S_{t_{k+1}}} − W_{S_{t_k}}`, row-major `cells × d`.
    pub dw: Vec<f64>,
    pub events: PrmEventStream,
    /// Grid index of every PRM event.
    pub event_nodes: Vec<usize>,
    /// Subordinator jumps `(time, size)` kept by the sampler.
    pub sub_jumps: Vec<(f64, f64)>,
}

impl NoiseRecord {
    pub fn cells(&self) -> usize {
        self.ds.len()
    }

    pub fn dw_cell(&self, k: usize) -> &[f64] {
        &self.dw[k * self.d..(k + 1) * self.d]
    }

    /// `L_{t_k}` for all nodes.
    pub fn driver_values(&self) -> Vec<DVector<f64>> {
        let mut acc = DVector::zeros(self.d);
        let mut out = Vec::with_capacity(self.times.len());
        out.push(acc.clone());
        for k in 0..self.cells() {
            for (a, w) in acc.iter_mut().zip(self.dw_cell(k)) {
                *a += w;
            }
            out.push(acc.clone());
        }
        out
    }

    /// Index of the grid node nearest to `t`.
    pub fn node_of(&self, t: f64) -> Result<usize> {
        let (t0, t_end) = (self.times[0], *self.times.last().unwrap());
        let slack = 1e-9 * (1.0 + t_end.abs());
        if !(t >= t0 - slack && t <= t_end + slack) {
            return Err(data(format!("time {t} outside the noise record [{t0}, {t_end}]")));
        }
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return Ok(0);
        }
        if k == self.times.len() {
            return Ok(k - 1);
        }
        Ok(if t - self.times[k - 1] <= self.times[k] - t { k - 1 } else { k })
    }
}

/// Merges the uniform grid with extra nodes; equal timestamps collapse.
fn refined_grid(horizon: f64, step: f64, extra: &[f64]) -> Result<Vec<f64>> {
    let mut times = uniform_grid(horizon, step)?;
    for &t in extra {
        if !(t >= 0.0 && t <= horizon) {
            return Err(argument(format!("grid node {t} outside [0, {horizon}]")));
        }
    }
    times.extend_from_slice(extra);
    times.sort_by(|a, b| a.total_cmp(b));
    times.dedup();
    Ok(times)
}

/// Draws the full noise record. PRM events, subordinator and Brownian
/// increments come from separate streams of `seed`.
pub fn generate_noise(model: &ModelSpec, sim: &SimulationSpec, seed: u64) -> Result<NoiseRecord> {
    if !(sim.horizon > 0.0 && sim.horizon.is_finite()) {
        return Err(argument(format!("horizon must be positive, got {}", sim.horizon)));
    }
    if !(sim.step > 0.0 && sim.step <= sim.horizon) {
        return Err(argument(format!("step must lie in (0, horizon], got {}", sim.step)));
    }
    let events = sample_events(model.rates.states(), model.rates.bound, sim.horizon, &mut rng::stream_rng(seed, streams::SWITCHING));
    let mut extra = sim.extra_times.clone();
    extra.extend_from_slice(&events.times);
    let times = refined_grid(sim.horizon, sim.step, &extra)?;
    let event_nodes = events.times.iter().map(|t| times.partition_point(|&s| s < *t)).collect();

    let sampler = SubordinatorSampler::new(&sim.levy)?;
    let (ds, sub_jumps) = sampler.increments(&times, &mut rng::stream_rng(seed, streams::SUBORDINATOR));
    let d = model.d();
    let mut rng_w = rng::stream_rng(seed, streams::BROWNIAN);
    let mut dw = Vec::with_capacity(ds.len() * d);
    for (k, &v) in ds.iter().enumerate() {
        if !(v >= 0.0) {
            return Err(data(format!("negative subordinator increment {v} on cell {k}")));
        }
        let scale = v.sqrt();
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng_w);
            dw.push(scale * z);
        }
    }
    Ok(NoiseRecord { s: cumulate(&ds), times, ds, d, dw, events, event_nodes, sub_jumps })
}

/// Grid path of `(X, α, S)` sharing its noise record.
#[derive(Debug, Clone)]
pub struct CoupledPath {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    /// Regime in force on `[t_k, t_{k+1})`, i.e. after events at `t_k`.
    pub regimes: Vec<usize>,
    pub s: Vec<f64>,
    pub initial_regime: usize,
    pub noise: Option<Arc<NoiseRecord>>,
}

impl CoupledPath {
    pub fn noise(&self) -> Result<&NoiseRecord> {
        self.noise.as_deref().ok_or_else(|| data("path carries no noise record"))
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.x.last().expect("paths have at least one node")
    }

    pub fn terminal_regime(&self) -> usize {
        *self.regimes.last().expect("paths have at least one node")
    }

    /// Drops the noise record.
    pub fn without_noise(mut self) -> Self {
        self.noise = None;
        self
    }

    /// CSV with header `t,S,alpha,x1..xn`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.x.first().map_or(0, |v| v.len());
        let mut header = String::from("t,S,alpha");
        for i in 1..=n {
            header.push_str(&format!(",x{i}"));
        }
        writeln!(w, "{header}")?;
        for k in 0..self.times.len() {
            write!(w, "{},{},{}", self.times[k], self.s[k], self.regimes[k])?;
            for v in self.x[k].iter() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Piecewise-constant `h : [0, ∞) → ℝ^d`, equal to `values[k]` on
/// `[knots[k], knots[k+1])` and zero past the last knot.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    pub knots: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl StepFunction {
    pub fn new(knots: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if knots.len() != values.len() + 1 || values.is_empty() {
            return Err(argument("step function needs one more knot than values"));
        }
        if knots[0] != 0.0 || knots.windows(2).any(|w| !(w[1] > w[0])) || !knots.last().unwrap().is_finite() {
            return Err(argument("knots must start at 0 and increase strictly to a finite end"));
        }
        let d = values[0].len();
        if values.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
            return Err(argument("step values must be finite vectors of a common length"));
        }
        Ok(Self { knots, values })
    }

    /// `h = 1_{[0, length)} · direction`.
    pub fn indicator(length: f64, direction: DVector<f64>) -> Result<Self> {
        Self::new(vec![0.0, length], vec![direction])
    }

    pub fn zero(d: usize) -> Self {
        Self { knots: vec![0.0, 1.0], values: vec![DVector::zeros(d)] }
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// `(∫₀^∞ |h|²)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().zip(self.knots.windows(2)).map(|(v, w)| v.norm_squared() * (w[1] - w[0])).sum::<f64>().sqrt()
    }

    /// `∫₀^u h(r) dr` in closed form.
    pub fn integral(&self, u: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.integral_into(u, &mut out);
        out
    }

    pub fn integral_into(&self, u: f64, out: &mut DVector<f64>) {
        out.fill(0.0);
        for (v, w) in self.values.iter().zip(self.knots.windows(2)) {
            if u <= w[0] {
                break;
            }
            out.axpy(u.min(w[1]) - w[0], v, 1.0);
        }
    }

    /// `∫₀^{S_{t_{k+1}}} h − ∫₀^{S_{t_k}} h` for every cell.
    pub fn increments_along(&self, s: &[f64]) -> Vec<DVector<f64>> {
        let values: Vec<DVector<f64>> = s.iter().map(|&u| self.integral(u)).collect();
        values.windows(2).map(|w| &w[1] - &w[0]).collect()
    }
}

/// Shift `W_{S_t} → W_{S_t} + ε ∫₀^{S_t} h`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub h: StepFunction,
    pub epsilon: f64,
}

fn check_state(x: &DVector<f64>, step: usize) -> Result<()> {
    let norm = x.norm();
    if !norm.is_finite() || norm > OVERFLOW_NORM {
        return Err(Error::Numeric { step, message: format!("state norm {norm:e} exceeds {OVERFLOW_NORM:e}") });
    }
    Ok(())
}

/// Shared Euler loop. `forcing[k]` is added on cell `k` when present.
fn integrate(
    model: &ModelSpec,
    x0: &DVector<f64>,
    regime0: usize,
    noise: &NoiseRecord,
    forcing: Option<&[DVector<f64>]>,
) -> Result<(Vec<DVector<f64>>, Vec<usize>)> {
    let n = model.n();
    if x0.len() != n {
        return Err(argument(format!("x0 has length {}, model dimension is {n}", x0.len())));
    }
    if regime0 >= model.rates.states() {
        return Err(argument(format!("initial regime {regime0} out of range")));
    }
    if noise.d != model.d() || noise.dw.len() != noise.cells() * noise.d {
        return Err(data("noise record does not match the model's driver dimension"));
    }
    let nodes = noise.times.len();
    let mut xs = Vec::with_capacity(nodes);
    let mut regimes = Vec::with_capacity(nodes);
    let mut x = x0.clone();
    let mut regime = regime0;
    let mut drift = DVector::zeros(n);
    let mut ev = 0;
    let n_events = noise.event_nodes.len();
    for k in 0..nodes {
        while ev < n_events && noise.event_nodes[ev] == k {
            regime = next_state(&model.rates, &x, regime, noise.events.marks[ev]);
            ev += 1;
        }
        xs.push(x.clone());
        regimes.push(regime);
        if k + 1 == nodes {
            break;
        }
        let dt = noise.times[k + 1] - noise.times[k];
        model.drift.eval_into(&x, regime, &mut drift);
        x.axpy(dt, &drift, 1.0);
        let dw = noise.dw_cell(k);
        for (c, col) in model.sigma.column_iter().enumerate() {
            if dw[c] != 0.0 {
                x.axpy(dw[c], &col, 1.0);
            }
        }
        if let Some(f) = forcing {
            x.gemv(1.0, &model.sigma, &f[k], 1.0);
        }
        check_state(&x, k + 1)?;
    }
    Ok((xs, regimes))
}

/// Integrates the model on a freshly drawn noise record.
pub fn simulate_path(model: &ModelSpec, sim: &SimulationSpec, seed: u64) -> Result<CoupledPath> {
    let noise = generate_noise(model, sim, seed)?;
    simulate_with_noise(model, &sim.x0, sim.regime0, Arc::new(noise))
}

/// Integrates the model against an existing noise record.
pub fn simulate_with_noise(model: &ModelSpec, x0: &DVector<f64>, regime0: usize, noise: Arc<NoiseRecord>) -> Result<CoupledPath> {
    let (x, regimes) = integrate(model, x0, regime0, &noise, None)?;
    Ok(CoupledPath { times: noise.times.clone(), x, regimes, s: noise.s.clone(), initial_regime: regime0, noise: Some(noise) })
}

/// Re-integrates `base` with the driver shifted by `ε σ ∫₀^{S_t} h`. The PRM
/// marks are shared, so the regime path may only differ through `X`.
pub fn simulate_perturbed_path(model: &ModelSpec, base: &CoupledPath, pert: &PerturbationSpec) -> Result<CoupledPath> {
    let noise = base.noise.clone().ok_or_else(|| data("base path carries no noise record"))?;
    if pert.epsilon == 0.0 {
        return simulate_with_noise(model, &base.x[0], base.initial_regime, noise);
    }
    if pert.h.dim() != model.d() {
        return Err(argument(format!("h has dimension {}, driver dimension is {}", pert.h.dim(), model.d())));
    }
    let forcing: Vec<DVector<f64>> = pert.h.increments_along(&noise.s).into_iter().map(|v| v * pert.epsilon).collect();
    let (x, regimes) = integrate(model, &base.x[0], base.initial_regime, &noise, Some(&forcing))?;
    Ok(CoupledPath { times: noise.times.clone(), x, regimes, s: noise.s.clone(), initial_regime: base.initial_regime, noise: Some(noise) })
}

/// Path of the frozen-regime process on a window of the record.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPath {
    pub regime: usize,
    pub first_node: usize,
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
}

/// Euler integration on `[t₁, t₂]` (snapped to grid nodes) with the regime
/// held at `i`, reusing the window's driver increments.
pub fn frozen_regime_path(model: &ModelSpec, i: usize, t1: f64, t2: f64, start: &DVector<f64>, noise: &NoiseRecord) -> Result<FrozenPath> {
    if i >= model.rates.states() {
        return Err(argument(format!("regime {i} out of range")));
    }
    if !(t1 <= t2) {
        return Err(argument(format!("window [{t1}, {t2}] is empty")));
    }
    if start.len() != model.n() || noise.d != model.d() {
        return Err(argument("start point or noise record has the wrong dimension"));
    }
    let a = noise.node_of(t1)?;
    let b = noise.node_of(t2)?;
    let mut x = start.clone();
    let mut drift = DVector::zeros(model.n());
    let mut xs = Vec::with_capacity(b - a + 1);
    xs.push(x.clone());
    for k in a..b {
        let dt = noise.times[k + 1] - noise.times[k];
        model.drift.eval_into(&x, i, &mut drift);
        x.axpy(dt, &drift, 1.0);
        let dw = DVector::from_column_slice(noise.dw_cell(k));
        x.gemv(1.0, &model.sigma, &dw, 1.0);
        check_state(&x, k + 1)?;
        xs.push(x.clone());
    }
    Ok(FrozenPath { regime: i, first_node: a, times: noise.times[a..=b].to_vec(), x: xs })
}

/// `σ (L_{t_b} − L_{t_a})` helper for driftless checks.
pub fn sigma_driver_increment(sigma: &DMatrix<f64>, noise: &NoiseRecord, a: usize, b: usize) -> DVector<f64> {
    let mut acc = DVector::zeros(noise.d);
    for k in a..b {
        for (v, w) in acc.iter_mut().zip(noise.dw_cell(k)) {
            *v += w;
        }
    }
    sigma * acc
}

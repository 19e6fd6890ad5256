//! Subordinators, subordinated Brownian increments and the small/large
//! jump decomposition.
//!
//! A Lévy measure on `(0, ∞)` is held as a finite list of power-law pieces
//! `c·u^p` on `[lo, hi)` plus point masses. The stable measure
//! `u^{-(1+α/2)} du` is a single piece, a tabulated density becomes one
//! piece per table segment (log-log interpolation), and truncations only
//! clip piece ranges. Masses, first moments and inverse CDFs are then all
//! available in closed form.
//!
//! Normalization: the stable measure carries no constant, so the exact
//! sampler is scaled to the Laplace exponent
//! `∫(1 − e^{-su}) u^{-(1+β)} du = Γ(1−β)/β · s^β` with `β = α/2`.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{argument, data, spec, Result};
use crate::quadrature;
use crate::rng::{self, streams};

pub const DEFAULT_SMALL_JUMP_CUTOFF: f64 = 1e-4;

/// Shape of the Lévy measure `ν_S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LevyKind {
    /// `ν_S(du) = u^{-(1+α/2)} du`, the α/2-stable subordinator.
    Stable { alpha: f64 },
    /// Density given at nodes `(u, density)`, interpolated log-log. Segments
    /// with a zero endpoint carry no mass. With `extrapolate_tails` the first
    /// and last segments are continued as power laws to `0` and `∞`.
    Tabulated {
        nodes: Vec<(f64, f64)>,
        #[serde(default)]
        extrapolate_tails: bool,
    },
    /// `weight · δ_{location}`, a compound Poisson clock with fixed jumps.
    PointMass { location: f64, weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyMeasureSpec {
    #[serde(flatten)]
    pub kind: LevyKind,
    /// Jumps below this size are replaced by their mean drift when the
    /// subordinator is simulated by truncation.
    #[serde(default = "default_cutoff")]
    pub small_jump_cutoff: f64,
    /// Only jumps strictly below this size are kept (`1_{(0,upper)} ν_S`).
    #[serde(default)]
    pub upper_truncation: Option<f64>,
}

fn default_cutoff() -> f64 {
    DEFAULT_SMALL_JUMP_CUTOFF
}

/// `coef · u^exponent` on `[lo, hi)`; `hi` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPiece {
    pub lo: f64,
    pub hi: f64,
    pub coef: f64,
    pub exponent: f64,
}

/// `∫_a^b c·u^q du`, infinite when divergent.
fn power_integral(c: f64, q: f64, a: f64, b: f64) -> f64 {
    if b <= a || c == 0.0 {
        return 0.0;
    }
    if (q + 1.0).abs() < 1e-14 {
        if a == 0.0 || b.is_infinite() {
            return f64::INFINITY;
        }
        return c * (b / a).ln();
    }
    let r = q + 1.0;
    if a == 0.0 && r < 0.0 {
        return f64::INFINITY;
    }
    if b.is_infinite() {
        return if r < 0.0 { -c * a.powf(r) / r } else { f64::INFINITY };
    }
    c * (b.powf(r) - a.powf(r)) / r
}

impl PowerPiece {
    fn clip(&self, a: f64, b: f64) -> Option<PowerPiece> {
        let lo = self.lo.max(a);
        let hi = self.hi.min(b);
        (hi > lo).then_some(PowerPiece { lo, hi, ..*self })
    }

    pub fn mass(&self) -> f64 {
        power_integral(self.coef, self.exponent, self.lo, self.hi)
    }

    pub fn first_moment(&self) -> f64 {
        power_integral(self.coef, self.exponent + 1.0, self.lo, self.hi)
    }

    pub fn density(&self, u: f64) -> f64 {
        if u >= self.lo && u < self.hi {
            self.coef * u.powf(self.exponent)
        } else {
            0.0
        }
    }

    /// Point `x` with `∫_lo^x ν = m`, for `0 ≤ m ≤ mass`.
    fn invert(&self, m: f64) -> f64 {
        let p = self.exponent;
        let x = if (p + 1.0).abs() < 1e-14 {
            self.lo * (m / self.coef).exp()
        } else {
            let r = p + 1.0;
            (self.lo.powf(r) + m * r / self.coef).powf(1.0 / r)
        };
        x.clamp(self.lo, self.hi)
    }
}

impl LevyMeasureSpec {
    pub fn new(kind: LevyKind) -> Self {
        Self { kind, small_jump_cutoff: DEFAULT_SMALL_JUMP_CUTOFF, upper_truncation: None }
    }

    pub fn stable(alpha: f64) -> Self {
        Self::new(LevyKind::Stable { alpha })
    }

    pub fn tabulated(nodes: Vec<(f64, f64)>, extrapolate_tails: bool) -> Self {
        Self::new(LevyKind::Tabulated { nodes, extrapolate_tails })
    }

    pub fn point_mass(location: f64, weight: f64) -> Self {
        Self::new(LevyKind::PointMass { location, weight })
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        self.small_jump_cutoff = cutoff;
        self
    }

    /// Restriction `1_{(0, upper)} ν_S`.
    pub fn truncated(&self, upper: f64) -> Self {
        let upper = self.upper_truncation.map_or(upper, |u| u.min(upper));
        Self { upper_truncation: Some(upper), ..self.clone() }
    }

    pub fn stable_alpha(&self) -> Option<f64> {
        match self.kind {
            LevyKind::Stable { alpha } => Some(alpha),
            _ => None,
        }
    }

    /// True when increments can be drawn exactly rather than by truncation.
    pub fn has_exact_sampler(&self) -> bool {
        self.stable_alpha().is_some() && self.upper_truncation.is_none()
    }

    fn upper(&self) -> f64 {
        self.upper_truncation.unwrap_or(f64::INFINITY)
    }

    pub fn pieces(&self) -> Vec<PowerPiece> {
        let raw = match &self.kind {
            LevyKind::Stable { alpha } => vec![PowerPiece { lo: 0.0, hi: f64::INFINITY, coef: 1.0, exponent: -1.0 - alpha / 2.0 }],
            LevyKind::Tabulated { nodes, extrapolate_tails } => tabulated_pieces(nodes, *extrapolate_tails),
            LevyKind::PointMass { .. } => Vec::new(),
        };
        let upper = self.upper();
        raw.iter().filter_map(|p| p.clip(0.0, upper)).collect()
    }

    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match self.kind {
            LevyKind::PointMass { location, weight } if location < self.upper() && weight > 0.0 => {
                vec![(location, weight)]
            }
            _ => Vec::new(),
        }
    }

    /// Density of the absolutely continuous part at `u`.
    pub fn density(&self, u: f64) -> f64 {
        self.pieces().iter().map(|p| p.density(u)).sum()
    }

    /// `ν_S([a, b))`, possibly infinite.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        let cont: f64 = self.pieces().iter().filter_map(|p| p.clip(a, b)).map(|p| p.mass()).sum();
        let atoms: f64 = self.atoms().iter().filter(|(l, _)| *l >= a && *l < b).map(|(_, w)| w).sum();
        cont + atoms
    }

    /// `∫_{[a,b)} u ν_S(du)`, possibly infinite.
    pub fn first_moment_between(&self, a: f64, b: f64) -> f64 {
        let cont: f64 = self.pieces().iter().filter_map(|p| p.clip(a, b)).map(|p| p.first_moment()).sum();
        let atoms: f64 = self.atoms().iter().filter(|(l, _)| *l >= a && *l < b).map(|(l, w)| l * w).sum();
        cont + atoms
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            LevyKind::Stable { alpha } => {
                if !(*alpha > 0.0 && *alpha < 2.0) {
                    return Err(spec(format!("alpha must lie in (0,2), got {alpha}")));
                }
            }
            LevyKind::Tabulated { nodes, .. } => {
                if nodes.len() < 2 {
                    return Err(spec("tabulated measure needs at least two nodes"));
                }
                for w in nodes.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return Err(spec(format!("tabulated nodes must be strictly increasing in u at u={}", w[1].0)));
                    }
                }
                if let Some(&(u, d)) = nodes.iter().find(|(u, d)| !(*u > 0.0 && u.is_finite() && *d >= 0.0 && d.is_finite())) {
                    return Err(spec(format!("tabulated node ({u}, {d}) must have u > 0 and finite density ≥ 0")));
                }
            }
            LevyKind::PointMass { location, weight } => {
                if !(*location > 0.0 && location.is_finite() && *weight >= 0.0 && weight.is_finite()) {
                    return Err(spec(format!("point mass needs location > 0 and weight ≥ 0, got ({location}, {weight})")));
                }
            }
        }
        if !(self.small_jump_cutoff > 0.0 && self.small_jump_cutoff <= 1.0) {
            return Err(spec(format!("small_jump_cutoff must lie in (0,1], got {}", self.small_jump_cutoff)));
        }
        if let Some(u) = self.upper_truncation {
            if !(u > 0.0) {
                return Err(spec(format!("upper_truncation must be positive, got {u}")));
            }
        }
        let near = self.first_moment_between(0.0, 1.0);
        let far = self.mass_between(1.0, f64::INFINITY);
        if !(near.is_finite() && far.is_finite()) {
            return Err(spec("Lévy measure fails ∫(1∧u) ν(du) < ∞"));
        }
        Ok(())
    }
}

fn tabulated_pieces(nodes: &[(f64, f64)], extrapolate: bool) -> Vec<PowerPiece> {
    let mut segs: Vec<Option<PowerPiece>> = nodes
        .windows(2)
        .map(|w| {
            let ((u0, d0), (u1, d1)) = (w[0], w[1]);
            (d0 > 0.0 && d1 > 0.0 && u1 > u0).then(|| {
                let p = (d1 / d0).ln() / (u1 / u0).ln();
                PowerPiece { lo: u0, hi: u1, coef: d0 / u0.powf(p), exponent: p }
            })
        })
        .collect();
    if extrapolate {
        if let Some(Some(first)) = segs.first().copied() {
            segs.insert(0, Some(PowerPiece { lo: 0.0, hi: first.lo, ..first }));
        }
        if let Some(Some(last)) = segs.last().copied() {
            segs.push(Some(PowerPiece { lo: last.hi, hi: f64::INFINITY, ..last }));
        }
    }
    segs.into_iter().flatten().collect()
}

/// Parses a tabulated density from CSV text with header `u,density`.
pub fn parse_density_table(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| data("empty density table"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["u", "density"] {
        return Err(data(format!("density table header must be `u,density`, got `{header}`")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let mut it = line.split(',').map(str::trim);
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| data(format!("line {}: missing column", i + 2)))?.parse::<f64>().map_err(|e| data(format!("line {}: {e}", i + 2)))
            };
            Ok((parse(it.next())?, parse(it.next())?))
        })
        .collect()
}

/// Uniform grid `0, step, 2·step, …, horizon`; the last step may be short.
pub fn uniform_grid(horizon: f64, step: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(argument(format!("horizon must be positive, got {horizon}")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(argument(format!("grid step must be positive, got {step}")));
    }
    let n = ((horizon / step) - 1e-9).ceil().max(1.0) as usize;
    let mut times: Vec<f64> = (0..n).map(|k| k as f64 * step).collect();
    times.push(horizon);
    Ok(times)
}

// ---------------------------------------------------------------------------
// Samplers

/// Standard positive β-stable variate with `E e^{-sZ} = e^{-s^β}`
/// (Kanter's representation).
pub fn positive_stable<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    let u = loop {
        let u: f64 = rng.random::<f64>() * PI;
        if u > 0.0 {
            break u;
        }
    };
    let w: f64 = Exp1.sample(rng);
    let a = (beta * u).sin() / u.sin().powf(1.0 / beta);
    let b = (((1.0 - beta) * u).sin() / w).powf((1.0 - beta) / beta);
    a * b
}

/// Laplace-exponent coefficient `Γ(1−β)/β` of `u^{-(1+β)} du`.
pub fn stable_laplace_coefficient(alpha: f64) -> f64 {
    let beta = alpha / 2.0;
    gamma(1.0 - beta) / beta
}

/// Inverse-CDF sampler of jump sizes from `ν_S` restricted to `[lower, upper)`.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    pieces: Vec<PowerPiece>,
    atoms: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
    total: f64,
}

impl JumpSampler {
    pub fn new(spec: &LevyMeasureSpec, lower: f64, upper: f64) -> Result<Self> {
        let pieces: Vec<PowerPiece> = spec.pieces().iter().filter_map(|p| p.clip(lower, upper)).collect();
        let atoms: Vec<(f64, f64)> = spec.atoms().into_iter().filter(|(l, _)| *l >= lower && *l < upper).collect();
        let mut cumulative = Vec::with_capacity(pieces.len() + atoms.len());
        let mut total = 0.0;
        for p in &pieces {
            total += p.mass();
            cumulative.push(total);
        }
        for (_, w) in &atoms {
            total += w;
            cumulative.push(total);
        }
        if !total.is_finite() {
            return Err(spec_err_infinite(lower, upper));
        }
        Ok(Self { pieces, atoms, cumulative, total })
    }

    /// Total mass, i.e. the jump rate of the compound Poisson part.
    pub fn rate(&self) -> f64 {
        self.total
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let target = rng.random::<f64>() * self.total;
        let idx = self.cumulative.partition_point(|&c| c <= target).min(self.cumulative.len() - 1);
        let before = if idx == 0 { 0.0 } else { self.cumulative[idx - 1] };
        if idx < self.pieces.len() {
            self.pieces[idx].invert(target - before)
        } else {
            self.atoms[idx - self.pieces.len()].0
        }
    }
}

fn spec_err_infinite(lower: f64, upper: f64) -> crate::Error {
    spec(format!("ν_S([{lower}, {upper})) is infinite"))
}

/// Draws subordinator increments over consecutive grid cells.
///
/// Exact stable kinds draw each cell increment directly. Other kinds keep
/// jumps of size `≥ δ` from a compound Poisson stream and replace smaller
/// jumps by the drift `∫₀^δ u ν(du)`.
#[derive(Debug, Clone)]
pub struct SubordinatorSampler {
    exact_alpha: Option<f64>,
    drift: f64,
    jumps: Option<JumpSampler>,
}

impl SubordinatorSampler {
    pub fn new(spec: &LevyMeasureSpec) -> Result<Self> {
        spec.validate()?;
        if spec.has_exact_sampler() {
            return Ok(Self { exact_alpha: spec.stable_alpha(), drift: 0.0, jumps: None });
        }
        let delta = spec.small_jump_cutoff;
        let drift = small_jump_drift(spec, delta)?;
        let jumps = JumpSampler::new(spec, delta, f64::INFINITY)?;
        Ok(Self { exact_alpha: None, drift, jumps: Some(jumps) })
    }

    /// Compensating drift rate (zero for the exact sampler).
    pub fn drift(&self) -> f64 {
        self.drift
    }

    /// Increments on the cells of `times`, plus the recorded jumps.
    pub fn increments<R: Rng + ?Sized>(&self, times: &[f64], rng: &mut R) -> (Vec<f64>, Vec<(f64, f64)>) {
        let cells = times.len().saturating_sub(1);
        if let Some(alpha) = self.exact_alpha {
            let beta = alpha / 2.0;
            let c = stable_laplace_coefficient(alpha);
            let mut ds = Vec::with_capacity(cells);
            let mut jumps = Vec::with_capacity(cells);
            for w in times.windows(2) {
                let dt = w[1] - w[0];
                let inc = if dt > 0.0 { (c * dt).powf(1.0 / beta) * positive_stable(beta, rng) } else { 0.0 };
                ds.push(inc);
                jumps.push((w[1], inc));
            }
            return (ds, jumps);
        }
        let mut ds: Vec<f64> = times.windows(2).map(|w| self.drift * (w[1] - w[0])).collect();
        let mut jumps = Vec::new();
        let sampler = self.jumps.as_ref().expect("truncated sampler carries a jump table");
        let rate = sampler.rate();
        if rate > 0.0 && cells > 0 {
            let (t0, horizon) = (times[0], times[cells]);
            let mut t = t0;
            loop {
                let gap: f64 = Exp1.sample(rng);
                t += gap / rate;
                if t > horizon {
                    break;
                }
                let size = sampler.sample(rng);
                // cell k covers (t_k, t_{k+1}]
                let k = times.partition_point(|&s| s < t).saturating_sub(1).min(cells - 1);
                ds[k] += size;
                jumps.push((t, size));
            }
        }
        (ds, jumps)
    }

    /// Value of the subordinator at time `t`.
    pub fn sample_value<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> f64 {
        if let Some(alpha) = self.exact_alpha {
            let beta = alpha / 2.0;
            return (stable_laplace_coefficient(alpha) * t).powf(1.0 / beta) * positive_stable(beta, rng);
        }
        let sampler = self.jumps.as_ref().expect("truncated sampler carries a jump table");
        let mean = sampler.rate() * t;
        let count = if mean > 0.0 { Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0) } else { 0 };
        let mut value = self.drift * t;
        for _ in 0..count {
            value += sampler.sample(rng);
        }
        value
    }
}

/// Discretely observed subordinator path.
#[derive(Debug, Clone, PartialEq)]
pub struct SubordinatorPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Jumps `(time, size)` kept explicitly. For the exact stable sampler
    /// each cell increment is recorded as one aggregated jump at the cell end.
    pub jumps: Vec<(f64, f64)>,
    /// Drift rate standing in for jumps below the cutoff.
    pub drift: f64,
}

impl SubordinatorPath {
    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }
}

/// Cumulative values from increments; `S_0 = 0`.
pub(crate) fn cumulate(ds: &[f64]) -> Vec<f64> {
    let mut values = Vec::with_capacity(ds.len() + 1);
    let mut acc = 0.0;
    values.push(acc);
    for d in ds {
        acc += d;
        values.push(acc);
    }
    values
}

pub fn sample_subordinator_path(spec: &LevyMeasureSpec, horizon: f64, step: f64, seed: u64) -> Result<SubordinatorPath> {
    let times = uniform_grid(horizon, step)?;
    let sampler = SubordinatorSampler::new(spec)?;
    let mut rng = rng::stream_rng(seed, streams::SUBORDINATOR);
    let (ds, jumps) = sampler.increments(&times, &mut rng);
    Ok(SubordinatorPath { values: cumulate(&ds), times, jumps, drift: sampler.drift() })
}

/// `∫₀^δ u ν_S(du)`, the mean contribution of jumps below `δ` per unit time.
pub fn small_jump_drift(spec: &LevyMeasureSpec, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(argument(format!("cutoff must lie in (0,1], got {delta}")));
    }
    let m = spec.first_moment_between(0.0, delta);
    if !m.is_finite() {
        return Err(spec_err(format!("∫₀^{delta} u ν(du) diverges")));
    }
    Ok(m)
}

fn spec_err(msg: String) -> crate::Error {
    spec(msg)
}

// ---------------------------------------------------------------------------
// Condition on the small-jump intensity

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum H3Verdict {
    Holds,
    TendsToZero,
    Diverges,
}

#[derive(Debug, Clone, PartialEq)]
pub struct H3Report {
    pub theta: f64,
    /// `(ε, ε^{θ/2−1} ∫₀^ε u ν(du))`, ordered by decreasing ε.
    pub values: Vec<(f64, f64)>,
    /// Least-squares slope of `ln value` against `ln ε`.
    pub slope: f64,
    /// Limit estimate (value at the smallest ε) when the verdict holds.
    pub c_theta: Option<f64>,
    pub verdict: H3Verdict,
}

pub const H3_REL_TOL: f64 = 0.05;

/// Evaluates `ε^{θ/2−1} ∫₀^ε u ν(du)` along `eps_grid` and decides whether
/// it settles to a positive constant as `ε → 0`.
pub fn check_h3(spec: &LevyMeasureSpec, theta: f64, eps_grid: &[f64], rel_tol: f64) -> Result<H3Report> {
    if !(theta > 0.0 && theta < 2.0) {
        return Err(argument(format!("theta must lie in (0,2), got {theta}")));
    }
    let mut grid: Vec<f64> = eps_grid.to_vec();
    if grid.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(argument("ε grid must lie in (0,1]"));
    }
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    let (hi, lo) = (grid[0], *grid.last().unwrap());
    if hi / lo < 1e3 * (1.0 - 1e-9) {
        return Err(argument("ε grid must span at least three decades"));
    }
    let mut values = Vec::with_capacity(grid.len());
    for &e in &grid {
        let m = spec.first_moment_between(0.0, e);
        values.push((e, e.powf(theta / 2.0 - 1.0) * m));
    }
    let slope = log_log_slope(&values);
    let last = values.last().unwrap().1;
    let verdict = if last.is_infinite() || values.iter().any(|v| v.1.is_infinite()) {
        H3Verdict::Diverges
    } else if last <= 0.0 {
        H3Verdict::TendsToZero
    } else {
        let tail: Vec<f64> = values.iter().filter(|(e, _)| *e <= 10.0 * lo).map(|v| v.1).collect();
        let max = tail.iter().cloned().fold(f64::MIN, f64::max);
        let min = tail.iter().cloned().fold(f64::MAX, f64::min);
        if max / min - 1.0 <= rel_tol {
            H3Verdict::Holds
        } else if slope > 0.0 {
            H3Verdict::TendsToZero
        } else {
            H3Verdict::Diverges
        }
    };
    let c_theta = (verdict == H3Verdict::Holds).then_some(last);
    Ok(H3Report { theta, values, slope, c_theta, verdict })
}

pub(crate) fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite()).map(|(x, y)| (x.ln(), y.ln())).collect();
    least_squares_slope(&pts)
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

// ---------------------------------------------------------------------------
// Subordinated Brownian motion

#[derive(Debug, Clone, PartialEq)]
pub struct SubordinatedBmPath {
    /// `W_{S_{t_{k+1}}} − W_{S_{t_k}}` per cell.
    pub increments: Vec<DVector<f64>>,
    /// `S_{t_{k+1}} − S_{t_k}` per cell.
    pub variances: Vec<f64>,
}

/// Gaussian increments `√ΔS · N(0, I_d)`, one per cell.
pub(crate) fn brownian_increments<R: Rng + ?Sized>(ds: &[f64], d: usize, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    ds.iter()
        .enumerate()
        .map(|(k, &v)| {
            if !(v >= 0.0) {
                return Err(data(format!("negative subordinator increment {v} on cell {k}")));
            }
            let scale = v.sqrt();
            Ok(DVector::from_fn(d, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            }))
        })
        .collect()
}

pub fn sample_subordinated_bm(path: &SubordinatorPath, d: usize, seed: u64) -> Result<SubordinatedBmPath> {
    if d == 0 {
        return Err(argument("Brownian dimension must be at least 1"));
    }
    let variances = path.increments();
    let mut rng = rng::stream_rng(seed, streams::BROWNIAN);
    let increments = brownian_increments(&variances, d, &mut rng)?;
    Ok(SubordinatedBmPath { increments, variances })
}

// ---------------------------------------------------------------------------
// Small/large jump decomposition

/// `ν_S = 1_{(0,1)} ν_S + 1_{[1,∞)} ν_S`: a truncated subordinator plus a
/// compound Poisson stream of Gaussian marks with random variance.
#[derive(Debug, Clone)]
pub struct DecompositionSpec {
    pub truncated: LevyMeasureSpec,
    /// `λ₁ = ν_S([1, ∞))`.
    pub large_jump_rate: f64,
    large_jumps: JumpSampler,
}

pub fn decompose_large_jumps(spec: &LevyMeasureSpec) -> Result<DecompositionSpec> {
    spec.validate()?;
    let large_jumps = JumpSampler::new(spec, 1.0, f64::INFINITY)?;
    let rate = large_jumps.rate();
    if rate <= 0.0 {
        return Err(crate::Error::Unsupported("ν_S([1,∞)) = 0: no large jumps to extract".into()));
    }
    Ok(DecompositionSpec { truncated: spec.truncated(1.0), large_jump_rate: rate, large_jumps })
}

impl DecompositionSpec {
    /// Mixing variance `s ~ 1_{[1,∞)} ν_S / λ₁` and mark `ξ ~ N(0, s·I_d)`.
    pub fn sample_xi_with_mixing<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> (f64, DVector<f64>) {
        let s = self.large_jumps.sample(rng);
        let scale = s.sqrt();
        let xi = DVector::from_fn(d, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        });
        (s, xi)
    }

    /// `H_t`: sum of `N'_t ~ Poisson(λ₁ t)` independent marks. Returns the
    /// value and the jump count.
    pub fn sample_compound<R: Rng + ?Sized>(&self, t: f64, d: usize, rng: &mut R) -> (DVector<f64>, u64) {
        let mut h = DVector::zeros(d);
        let mut count = 0u64;
        let mut clock: f64 = Exp1.sample(rng);
        while clock / self.large_jump_rate <= t {
            h += self.sample_xi_with_mixing(d, rng).1;
            count += 1;
            let gap: f64 = Exp1.sample(rng);
            clock += gap;
        }
        (h, count)
    }
}

pub fn sample_xi(decomp: &DecompositionSpec, d: usize, seed: u64) -> DVector<f64> {
    let mut rng = rng::stream_rng(seed, streams::LARGE_JUMPS);
    decomp.sample_xi_with_mixing(d, &mut rng).1
}

// ---------------------------------------------------------------------------
// Lévy measure of the subordinated driver

/// Density of `ν_L` at `y ≠ 0`:
/// `∫₀^∞ (2πs)^{-d/2} e^{-|y|²/2s} ν_S(ds)`.
pub fn levy_measure_of_l(spec: &LevyMeasureSpec, y: &[f64]) -> Result<f64> {
    let r2: f64 = y.iter().map(|v| v * v).sum();
    if y.is_empty() || r2 == 0.0 {
        return Err(argument("ν_L is singular at the origin; y must be nonzero"));
    }
    let d = y.len() as f64;
    let kernel = |s: f64| {
        if s <= 0.0 {
            0.0
        } else {
            (2.0 * PI * s).powf(-d / 2.0) * (-r2 / (2.0 * s)).exp()
        }
    };
    let mut total = 0.0;
    for (loc, w) in spec.atoms() {
        total += w * kernel(loc);
    }
    // split at multiples of the kernel's peak scale
    let breaks = [0.0, r2 / 100.0, r2 / 10.0, r2, 10.0 * r2, 100.0 * r2, f64::INFINITY];
    for piece in spec.pieces() {
        for w in breaks.windows(2) {
            let Some(p) = piece.clip(w[0], w[1]) else { continue };
            let f = |s: f64| kernel(s) * p.coef * s.powf(p.exponent);
            let q = if p.hi.is_infinite() {
                quadrature::integrate_to_infinity(f, p.lo, quadrature::DEFAULT_ABS_TOL * 1e-3, quadrature::DEFAULT_REL_TOL)?
            } else {
                quadrature::integrate(f, p.lo, p.hi, quadrature::DEFAULT_ABS_TOL * 1e-3, quadrature::DEFAULT_REL_TOL)?
            };
            total += q.value;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stable_small_jump_drift_closed_form() {
        let s = LevyMeasureSpec::stable(1.0);
        assert!((small_jump_drift(&s, 1.0).unwrap() - 2.0).abs() < 1e-14);
        assert!((small_jump_drift(&s, 0.25).unwrap() - 1.0).abs() < 1e-14);
        let zero = LevyMeasureSpec::tabulated(vec![(0.1, 0.0), (1.0, 0.0)], false);
        assert_eq!(small_jump_drift(&zero, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn small_jump_drift_matches_quadrature_for_tables() {
        let nodes = vec![(0.01, 50.0), (0.1, 8.0), (0.5, 2.0), (2.0, 0.1)];
        let s = LevyMeasureSpec::tabulated(nodes, true);
        for delta in [0.05, 0.3, 1.0] {
            let exact = small_jump_drift(&s, delta).unwrap();
            let q = quadrature::integrate_from_zero(|u| u * s.density(u), delta, 1e-12, 1e-12).unwrap();
            assert!((exact - q.value).abs() < 1e-7 * exact.max(1.0), "δ={delta}: {exact} vs {}", q.value);
        }
    }

    #[test]
    fn divergent_table_is_rejected() {
        // lower tail ∝ u^{-2.5}: ∫ u ν diverges at 0
        let s = LevyMeasureSpec::tabulated(vec![(0.1, 1.0), (1.0, 10f64.powf(-2.5))], true);
        assert!(matches!(s.validate(), Err(crate::Error::Spec(_))));
        assert!(matches!(small_jump_drift(&s, 0.5), Err(crate::Error::Spec(_))));
    }

    #[test]
    fn table_reproduces_stable_power_law() {
        let table = LevyMeasureSpec::tabulated(vec![(0.5, 0.5f64.powf(-1.5)), (2.0, 2f64.powf(-1.5))], true);
        let stable = LevyMeasureSpec::stable(1.0);
        for u in [1e-3, 0.7, 5.0] {
            assert!((table.density(u) - stable.density(u)).abs() < 1e-9 * stable.density(u));
        }
        assert!((table.mass_between(1.0, f64::INFINITY) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn large_jump_rate() {
        assert!((decompose_large_jumps(&LevyMeasureSpec::stable(1.0)).unwrap().large_jump_rate - 2.0).abs() < 1e-12);
        assert!((decompose_large_jumps(&LevyMeasureSpec::stable(0.5)).unwrap().large_jump_rate - 4.0).abs() < 1e-12);
        let small = LevyMeasureSpec::tabulated(vec![(0.1, 1.0), (0.9, 1.0)], false);
        assert!(matches!(decompose_large_jumps(&small), Err(crate::Error::Unsupported(_))));
    }

    #[test]
    fn xi_mixing_median() {
        let dec = decompose_large_jumps(&LevyMeasureSpec::stable(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s: Vec<f64> = (0..20_001).map(|_| dec.sample_xi_with_mixing(1, &mut rng).0).collect();
        s.sort_by(f64::total_cmp);
        let median = s[10_000];
        // F(a) = 1 − a^{-1/2}; the median sits at 4 and the density there is 1/16
        let se = 0.5 / (20_001f64.sqrt() * (1.0 / 16.0));
        assert!((median - 4.0).abs() < 3.0 * se, "median {median}");
    }

    #[test]
    fn xi_conditional_variance() {
        let dec = decompose_large_jumps(&LevyMeasureSpec::point_mass(3.0, 1.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40_000;
        let xs: Vec<DVector<f64>> = (0..n).map(|_| dec.sample_xi_with_mixing(2, &mut rng).1).collect();
        for c in 0..2 {
            let var = xs.iter().map(|x| x[c] * x[c]).sum::<f64>() / n as f64;
            // variance of the estimator: 2 s₀² / n
            assert!((var - 3.0).abs() < 3.0 * (2.0 * 9.0 / n as f64).sqrt(), "coord {c}: {var}");
        }
    }

    #[test]
    fn levy_measure_of_l_point_mass_is_gaussian() {
        let s = LevyMeasureSpec::point_mass(2.0, 1.0);
        let y = [0.3, -1.1];
        let r2: f64 = y.iter().map(|v| v * v).sum();
        let expect = (2.0 * PI * 2.0f64).powf(-1.0) * (-r2 / 4.0).exp();
        assert!((levy_measure_of_l(&s, &y).unwrap() - expect).abs() < 1e-14);
        assert!(levy_measure_of_l(&s, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn levy_measure_of_l_stable_matches_gamma_closed_form() {
        // ∫ (2πs)^{-d/2} e^{-r²/2s} s^{-1-β} ds = (2π)^{-d/2} (r²/2)^{-d/2-β} Γ(d/2+β)
        let alpha = 1.0;
        let s = LevyMeasureSpec::stable(alpha);
        for (d, r) in [(1usize, 0.01), (1, 0.5), (2, 1.7), (3, 4.0)] {
            let mut y = vec![0.0; d];
            y[0] = r;
            let got = levy_measure_of_l(&s, &y).unwrap();
            let df = d as f64;
            let expect = (2.0 * PI).powf(-df / 2.0) * (r * r / 2.0).powf(-df / 2.0 - alpha / 2.0) * gamma(df / 2.0 + alpha / 2.0);
            assert!((got - expect).abs() < 1e-8 * expect, "d={d} r={r}: {got} vs {expect}");
        }
        let a = levy_measure_of_l(&s, &[1e-3]).unwrap();
        let b = levy_measure_of_l(&s, &[2e-3]).unwrap();
        assert!((b / a - 0.25).abs() < 1e-8);
        assert_eq!(levy_measure_of_l(&s, &[0.7]).unwrap(), levy_measure_of_l(&s, &[-0.7]).unwrap());
    }

    #[test]
    fn h3_examples() {
        let s = LevyMeasureSpec::stable(1.0);
        let grid: Vec<f64> = (0..=8).map(|k| 10f64.powf(-2.0 - 0.5 * k as f64)).collect();
        let r = check_h3(&s, 1.0, &grid, H3_REL_TOL).unwrap();
        assert_eq!(r.verdict, H3Verdict::Holds);
        assert!((r.c_theta.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(check_h3(&s, 1.5, &grid, H3_REL_TOL).unwrap().verdict, H3Verdict::TendsToZero);
        assert_eq!(check_h3(&s, 0.5, &grid, H3_REL_TOL).unwrap().verdict, H3Verdict::Diverges);
        assert!(check_h3(&s, 1.0, &[1e-2, 1e-3], H3_REL_TOL).is_err());
    }

    #[test]
    fn uniform_grid_ends_at_horizon() {
        let g = uniform_grid(1.0, 0.3).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(uniform_grid(0.0, 0.1).is_err());
        assert!(uniform_grid(1.0, -0.1).is_err());
        assert_eq!(uniform_grid(1.0, 0.001).unwrap().len(), 1001);
    }

    #[test]
    fn parse_table() {
        let t = parse_density_table("u,density\n0.1,3\n1.0, 0.5\n").unwrap();
        assert_eq!(t, vec![(0.1, 3.0), (1.0, 0.5)]);
        assert!(parse_density_table("x,y\n1,2").is_err());
        assert!(parse_density_table("u,density\n1,abc").is_err());
    }
}

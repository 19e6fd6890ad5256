//! State-dependent switching realized by thinning a Poisson random measure.
//!
//! Events arrive at rate `m₀(m₀−1)K` with marks uniform on
//! `[0, m₀(m₀−1)K)`. At an event the regime jumps from `i` to `j` when the
//! mark falls in `Δ_ij(x)`. For each source state the intervals `Δ_ij`,
//! `j ≠ i`, are packed from 0 in increasing `j`, each of length `q_ij(x)`,
//! left-closed and right-open. Regimes are 0-based.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{argument, spec, Result};
use crate::rng::{self, streams};

/// Rates `q_ij(x)` including the diagonal.
pub trait RateFunction: Send + Sync + fmt::Debug {
    fn states(&self) -> usize;
    fn rate(&self, x: &DVector<f64>, i: usize, j: usize) -> f64;
    /// True when no rate depends on `x`.
    fn is_constant(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantRates {
    pub q: DMatrix<f64>,
}

impl ConstantRates {
    pub fn new(q: DMatrix<f64>) -> Self {
        Self { q }
    }

    /// Single regime, never switches.
    pub fn none() -> Self {
        Self { q: DMatrix::zeros(1, 1) }
    }

    /// Two states with symmetric rate `lambda`.
    pub fn symmetric_pair(lambda: f64) -> Self {
        Self { q: DMatrix::from_row_slice(2, 2, &[-lambda, lambda, lambda, -lambda]) }
    }
}

impl RateFunction for ConstantRates {
    fn states(&self) -> usize {
        self.q.nrows()
    }
    fn rate(&self, _x: &DVector<f64>, i: usize, j: usize) -> f64 {
        self.q[(i, j)]
    }
    fn is_constant(&self) -> bool {
        true
    }
}

/// `q_ij(x) = low_ij + (high_ij − low_ij) / (1 + e^{−w·x})` off the
/// diagonal; the diagonal closes each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidRates {
    pub low: DMatrix<f64>,
    pub high: DMatrix<f64>,
    pub weights: DVector<f64>,
}

impl RateFunction for SigmoidRates {
    fn states(&self) -> usize {
        self.low.nrows()
    }
    fn rate(&self, x: &DVector<f64>, i: usize, j: usize) -> f64 {
        let m = self.states();
        let s = 1.0 / (1.0 + (-self.weights.dot(x)).exp());
        let off = |j: usize| self.low[(i, j)] + (self.high[(i, j)] - self.low[(i, j)]) * s;
        if i != j {
            off(j)
        } else {
            -(0..m).filter(|&k| k != i).map(off).sum::<f64>()
        }
    }
}

/// Rate functions together with their global bound `K`.
#[derive(Debug, Clone)]
pub struct RateMatrixSpec {
    pub rates: Arc<dyn RateFunction>,
    pub bound: f64,
}

impl RateMatrixSpec {
    pub fn new(rates: Arc<dyn RateFunction>, bound: f64) -> Result<Self> {
        if rates.states() == 0 {
            return Err(spec("at least one regime is required"));
        }
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(spec(format!("rate bound K must be positive, got {bound}")));
        }
        Ok(Self { rates, bound })
    }

    /// Constant generator; `K` is the largest absolute entry (1 if all zero).
    pub fn constant(q: DMatrix<f64>) -> Result<Self> {
        let k = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self::new(Arc::new(ConstantRates::new(q)), if k > 0.0 { k } else { 1.0 })
    }

    pub fn states(&self) -> usize {
        self.rates.states()
    }

    /// Length of the mark space, `m₀(m₀−1)K`.
    pub fn mark_space(&self) -> f64 {
        let m = self.states() as f64;
        m * (m - 1.0) * self.bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub max_bound_violation: f64,
    pub max_row_residual: f64,
    pub min_off_diagonal: f64,
}

pub const RATE_TOLERANCE: f64 = 1e-9;

/// Checks bound, sign and row-sum conditions at every grid point.
pub fn validate_rates(spec_: &RateMatrixSpec, grid: &[DVector<f64>]) -> Result<RateReport> {
    if grid.is_empty() {
        return Err(argument("validation grid is empty"));
    }
    let m = spec_.states();
    let mut report = RateReport { max_bound_violation: 0.0, max_row_residual: 0.0, min_off_diagonal: f64::INFINITY };
    for x in grid {
        for i in 0..m {
            let mut row = 0.0;
            for j in 0..m {
                let q = spec_.rates.rate(x, i, j);
                if !q.is_finite() {
                    return Err(spec(format!("q_{}{}({:?}) is not finite", i + 1, j + 1, x.as_slice())));
                }
                row += q;
                let excess = q.abs() - spec_.bound;
                report.max_bound_violation = report.max_bound_violation.max(excess.max(0.0));
                if excess > RATE_TOLERANCE {
                    return Err(spec(format!("|q_{}{}(x)| = {} exceeds K = {} at x = {:?}", i + 1, j + 1, q.abs(), spec_.bound, x.as_slice())));
                }
                if i != j {
                    report.min_off_diagonal = report.min_off_diagonal.min(q);
                    if q < -RATE_TOLERANCE {
                        return Err(spec(format!("q_{}{}(x) = {q} is negative at x = {:?}", i + 1, j + 1, x.as_slice())));
                    }
                }
            }
            report.max_row_residual = report.max_row_residual.max(row.abs());
            if row.abs() > RATE_TOLERANCE {
                return Err(spec(format!("row {} of Q(x) sums to {row} at x = {:?}", i + 1, x.as_slice())));
            }
        }
    }
    if m == 1 {
        report.min_off_diagonal = 0.0;
    }
    Ok(report)
}

/// Regime reached from `i` at a PRM event with mark `z` (`i` itself when the
/// mark misses every interval).
pub fn partition_point(spec_: &RateMatrixSpec, x: &DVector<f64>, i: usize, z: f64) -> Result<usize> {
    let space = spec_.mark_space();
    if !(z >= 0.0 && z <= space) {
        return Err(argument(format!("mark {z} outside [0, {space}]")));
    }
    Ok(next_state(spec_, x, i, z))
}

#[inline]
pub(crate) fn next_state(spec_: &RateMatrixSpec, x: &DVector<f64>, i: usize, z: f64) -> usize {
    let mut left = 0.0;
    for j in 0..spec_.states() {
        if j == i {
            continue;
        }
        let right = left + spec_.rates.rate(x, i, j).max(0.0);
        if z >= left && z < right {
            return j;
        }
        left = right;
    }
    i
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrmEventStream {
    pub times: Vec<f64>,
    pub marks: Vec<f64>,
}

impl PrmEventStream {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub(crate) fn sample_events<R: Rng + ?Sized>(states: usize, bound: f64, horizon: f64, rng: &mut R) -> PrmEventStream {
    let m = states as f64;
    let space = m * (m - 1.0) * bound;
    let mut out = PrmEventStream::default();
    if space <= 0.0 || horizon <= 0.0 {
        return out;
    }
    let mut t = 0.0;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap / space;
        if t > horizon {
            break;
        }
        out.times.push(t);
        out.marks.push(rng.random::<f64>() * space);
    }
    out
}

/// Homogeneous Poisson event times with i.i.d. uniform marks.
pub fn simulate_regime_events(states: usize, bound: f64, horizon: f64, seed: u64) -> Result<PrmEventStream> {
    if horizon < 0.0 || !horizon.is_finite() {
        return Err(argument(format!("horizon must be nonnegative, got {horizon}")));
    }
    let mut rng = rng::stream_rng(seed, streams::SWITCHING);
    Ok(sample_events(states, bound, horizon, &mut rng))
}

/// Longest gap of `{0} ∪ events ∪ {horizon}`; ties go to the earliest gap.
pub fn longest_constant_interval(event_times: &[f64], horizon: f64) -> (f64, f64) {
    let mut best = (0.0, 0.0);
    let mut prev = 0.0;
    for &t in event_times.iter().chain(std::iter::once(&horizon)) {
        if t - prev > best.1 - best.0 {
            best = (prev, t);
        }
        prev = t;
    }
    best
}

/// Piecewise-constant regime record.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePath {
    pub initial: usize,
    /// `(time, new state)` for every effective switch.
    pub switches: Vec<(f64, usize)>,
}

impl RegimePath {
    pub fn state_at(&self, t: f64) -> usize {
        self.switches.iter().take_while(|(s, _)| *s <= t).last().map_or(self.initial, |&(_, j)| j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_state() -> RateMatrixSpec {
        let q = DMatrix::from_row_slice(3, 3, &[-0.5, 0.3, 0.2, 0.1, -0.1, 0.0, 0.0, 0.0, 0.0]);
        RateMatrixSpec::new(Arc::new(ConstantRates::new(q)), 1.0).unwrap()
    }

    #[test]
    fn partition_examples() {
        let s = three_state();
        let x = DVector::zeros(1);
        assert_eq!(partition_point(&s, &x, 0, 0.1).unwrap(), 1);
        assert_eq!(partition_point(&s, &x, 0, 0.35).unwrap(), 2);
        assert_eq!(partition_point(&s, &x, 0, 0.7).unwrap(), 0);
        assert_eq!(partition_point(&s, &x, 0, 0.3).unwrap(), 2);
        assert_eq!(partition_point(&s, &x, 2, 0.0).unwrap(), 2);
        assert!(partition_point(&s, &x, 0, 6.5).is_err());
        assert!(partition_point(&s, &x, 0, -0.1).is_err());
    }

    #[test]
    fn validation_passes_and_names_offenders() {
        let ok = RateMatrixSpec::new(Arc::new(ConstantRates::symmetric_pair(1.0)), 1.0).unwrap();
        let grid = vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])];
        let r = validate_rates(&ok, &grid).unwrap();
        assert_eq!(r.max_row_residual, 0.0);
        assert_eq!(r.min_off_diagonal, 1.0);

        let neg = RateMatrixSpec::new(Arc::new(ConstantRates::new(DMatrix::from_row_slice(2, 2, &[0.1, -0.1, 1.0, -1.0]))), 1.0).unwrap();
        let err = validate_rates(&neg, &grid).unwrap_err().to_string();
        assert!(err.contains("q_12"), "{err}");

        let rowsum = RateMatrixSpec::new(Arc::new(ConstantRates::new(DMatrix::from_row_slice(2, 2, &[-1.0, 1.001, 1.0, -1.0]))), 2.0).unwrap();
        assert!(validate_rates(&rowsum, &grid).unwrap_err().to_string().contains("row 1"));

        let over = RateMatrixSpec::new(Arc::new(ConstantRates::symmetric_pair(3.0)), 1.0).unwrap();
        assert!(validate_rates(&over, &grid).is_err());
        assert!(validate_rates(&ok, &[]).is_err());
    }

    #[test]
    fn sigmoid_rows_close() {
        let s = SigmoidRates {
            low: DMatrix::from_row_slice(2, 2, &[0.0, 0.2, 0.5, 0.0]),
            high: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.1, 0.0]),
            weights: DVector::from_vec(vec![2.0]),
        };
        let spec_ = RateMatrixSpec::new(Arc::new(s), 1.0).unwrap();
        let grid: Vec<DVector<f64>> = (-10..=10).map(|k| DVector::from_vec(vec![k as f64 * 0.5])).collect();
        validate_rates(&spec_, &grid).unwrap();
    }

    #[test]
    fn events_empty_for_zero_horizon_or_single_state() {
        assert!(simulate_regime_events(2, 1.0, 0.0, 1).unwrap().is_empty());
        assert!(simulate_regime_events(1, 1.0, 5.0, 1).unwrap().is_empty());
    }

    #[test]
    fn longest_interval_examples() {
        assert_eq!(longest_constant_interval(&[0.2, 0.5], 1.0), (0.5, 1.0));
        assert_eq!(longest_constant_interval(&[], 2.0), (0.0, 2.0));
        assert_eq!(longest_constant_interval(&[0.25, 0.5, 0.75], 1.0), (0.0, 0.25));
    }

    #[test]
    fn regime_path_lookup() {
        let p = RegimePath { initial: 0, switches: vec![(0.3, 1), (0.7, 0)] };
        assert_eq!(p.state_at(0.1), 0);
        assert_eq!(p.state_at(0.3), 1);
        assert_eq!(p.state_at(0.9), 0);
    }
}

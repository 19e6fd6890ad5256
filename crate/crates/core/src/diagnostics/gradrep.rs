//! Monte Carlo check of the gradient representation
//! `E ∂_j f(X'_t) = div Q^{·j} − G^j` for the truncated-driver process.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::engine::{mean_and_se, run_indexed};
use crate::error::{argument, data, Error, Result};
use crate::flows::{terminal_jacobian, Observable};
use crate::model::ModelSpec;
use crate::rng::derive_seed;
use crate::sde::{generate_noise, simulate_with_noise, NoiseRecord, SimulationSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct GradRepReport {
    pub coordinate: usize,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    /// `|lhs − rhs|`.
    pub residual: f64,
    /// `√(se_lhs² + se_rhs²)`.
    pub combined_se: f64,
    pub samples: usize,
}

impl GradRepReport {
    pub fn within(&self, k: f64) -> bool {
        self.residual <= k * self.combined_se || self.residual == 0.0
    }
}

/// `(X'_t, α'_t, K'_t)` from `x` on a shared record; `K' = (J')⁻¹`.
fn terminal_state(model: &ModelSpec, x: &DVector<f64>, regime: usize, noise: &Arc<NoiseRecord>) -> Result<(DVector<f64>, usize, DMatrix<f64>)> {
    let path = simulate_with_noise(model, x, regime, noise.clone())?;
    let j = terminal_jacobian(model, &path)?;
    let k = j.try_inverse().ok_or_else(|| data("terminal Jacobian is singular"))?;
    Ok((path.terminal().clone(), path.terminal_regime(), k))
}

/// Per-sample `(∂_j f(X'_t), div Q^{·j} − G^j)` with common noise across
/// the shifted starting points `x ± η e_i`.
fn sample_pair(
    model: &ModelSpec,
    f: &dyn Observable,
    j: usize,
    x: &DVector<f64>,
    regime: usize,
    sim: &SimulationSpec,
    eta: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let noise = Arc::new(generate_noise(model, sim, seed)?);
    let (xt, at, _) = terminal_state(model, x, regime, &noise)?;
    let lhs = f.gradient(&xt, at)[j];
    let fx = f.value(&xt, at);
    let mut div_q = 0.0;
    let mut div_k = 0.0;
    for i in 0..model.n() {
        let mut shift = DVector::zeros(model.n());
        shift[i] = eta;
        let (xp, ap, kp) = terminal_state(model, &(x + &shift), regime, &noise)?;
        let (xm, am, km) = terminal_state(model, &(x - &shift), regime, &noise)?;
        div_q += (f.value(&xp, ap) * kp[(i, j)] - f.value(&xm, am) * km[(i, j)]) / (2.0 * eta);
        div_k += (kp[(i, j)] - km[(i, j)]) / (2.0 * eta);
    }
    Ok((lhs, div_q - fx * div_k))
}

/// Runs the check with the driver truncated to jumps below 1.
pub fn gradient_representation_check(
    model: &ModelSpec,
    f: &dyn Observable,
    j: usize,
    sim: &SimulationSpec,
    samples: usize,
    eta: f64,
    seed: u64,
    workers: usize,
) -> Result<GradRepReport> {
    if !model.has_constant_rates() {
        return Err(Error::Unsupported("gradient representation needs switching rates that do not depend on x".into()));
    }
    if j >= model.n() {
        return Err(argument(format!("coordinate {j} out of range for n = {}", model.n())));
    }
    if !(eta > 0.0) || samples < 2 {
        return Err(argument("need a positive difference step and at least two samples"));
    }
    let truncated = SimulationSpec { levy: sim.levy.truncated(1.0), ..sim.clone() };
    let pairs = run_indexed(workers, samples, |s| sample_pair(model, f, j, &sim.x0, sim.regime0, &truncated, eta, derive_seed(seed, s as u64)))?;
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (lm, ls) = mean_and_se(&lhs);
    let (rm, rs) = mean_and_se(&rhs);
    Ok(GradRepReport { coordinate: j, lhs: lm, lhs_se: ls, rhs: rm, rhs_se: rs, residual: (lm - rm).abs(), combined_se: (ls * ls + rs * rs).sqrt(), samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::GaussianBump;
    use crate::levy::LevyMeasureSpec;
    use crate::model::presets;

    struct Constant;
    impl Observable for Constant {
        fn value(&self, _x: &DVector<f64>, _i: usize) -> f64 {
            2.0
        }
        fn gradient(&self, x: &DVector<f64>, _i: usize) -> DVector<f64> {
            DVector::zeros(x.len())
        }
    }

    fn sim(n: usize) -> SimulationSpec {
        SimulationSpec::new(DVector::from_element(n, 0.3), 0, 1.0, 0.05, LevyMeasureSpec::stable(1.0))
    }

    #[test]
    fn constant_function_gives_zero() {
        let m = presets::two_regime_linear(1.0).unwrap();
        let r = gradient_representation_check(&m, &Constant, 0, &sim(2), 20, 1e-4, 1, 1).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.rhs.abs() < 1e-9);
    }

    #[test]
    fn linear_drift_agrees() {
        let m = presets::linear(DMatrix::from_row_slice(2, 2, &[-0.5, 0.3, 0.0, -0.4]), DMatrix::identity(2, 2)).unwrap();
        let f = GaussianBump { center: DVector::zeros(2), width: 1.0 };
        let r = gradient_representation_check(&m, &f, 1, &sim(2), 500, 1e-4, 2, 1).unwrap();
        assert!(r.within(3.0), "{r:?}");
    }

    #[test]
    fn state_dependent_rates_are_unsupported() {
        use crate::switching::{RateMatrixSpec, SigmoidRates};
        let base = presets::zero_drift(1).unwrap();
        let rates = SigmoidRates {
            low: DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
            high: DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 2.0, -2.0]),
            weights: DVector::from_element(1, 1.0),
        };
        let m = ModelSpec { rates: RateMatrixSpec::new(Arc::new(rates), 2.0).unwrap(), ..base };
        let f = GaussianBump { center: DVector::zeros(1), width: 1.0 };
        assert!(matches!(gradient_representation_check(&m, &f, 0, &sim(1), 10, 1e-4, 1, 1), Err(Error::Unsupported(_))));
    }
}

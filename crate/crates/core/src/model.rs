//! Drift families, constant diffusion and switching rates of
//! `dX = b(X, α) dt + σ dL`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{spec, Result};
use crate::switching::RateMatrixSpec;

/// Drift `b(·, i)` with its Jacobian and, optionally, higher derivatives.
pub trait Drift: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval_into(&self, x: &DVector<f64>, regime: usize, out: &mut DVector<f64>);

    fn jacobian_into(&self, x: &DVector<f64>, regime: usize, out: &mut DMatrix<f64>);

    /// `∇^k b(x, i)[v₁, …, v_k]` with `k = dirs.len() ≥ 1`, when available.
    fn derivative_action(&self, _x: &DVector<f64>, _regime: usize, _dirs: &[&DVector<f64>]) -> Option<DVector<f64>> {
        None
    }

    /// Highest `k` for which `∇^k b` is available; `None` means every order.
    /// Order 1 is always served by the Jacobian.
    fn max_derivative_order(&self) -> Option<usize> {
        Some(1)
    }

    /// `sup_{x,i} ‖∇b(x,i)‖` in the operator 2-norm.
    fn jacobian_bound(&self) -> f64;

    fn eval(&self, x: &DVector<f64>, regime: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(x, regime, &mut out);
        out
    }

    fn jacobian(&self, x: &DVector<f64>, regime: usize) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        self.jacobian_into(x, regime, &mut out);
        out
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroDrift {
    pub n: usize,
}

impl Drift for ZeroDrift {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval_into(&self, _x: &DVector<f64>, _regime: usize, out: &mut DVector<f64>) {
        out.fill(0.0);
    }
    fn jacobian_into(&self, _x: &DVector<f64>, _regime: usize, out: &mut DMatrix<f64>) {
        out.fill(0.0);
    }
    fn derivative_action(&self, _x: &DVector<f64>, _regime: usize, _dirs: &[&DVector<f64>]) -> Option<DVector<f64>> {
        Some(DVector::zeros(self.n))
    }
    fn max_derivative_order(&self) -> Option<usize> {
        None
    }
    fn jacobian_bound(&self) -> f64 {
        0.0
    }
}

/// `b(x, i) = A_i x + c_i`. A single matrix is shared by all regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDrift {
    pub matrices: Vec<DMatrix<f64>>,
    pub offsets: Vec<DVector<f64>>,
    bound: f64,
}

impl LinearDrift {
    pub fn new(matrices: Vec<DMatrix<f64>>, offsets: Vec<DVector<f64>>) -> Result<Self> {
        let n = matrices.first().ok_or_else(|| spec("linear drift needs at least one matrix"))?.nrows();
        if matrices.iter().any(|a| a.nrows() != n || a.ncols() != n) {
            return Err(spec("linear drift matrices must all be n×n"));
        }
        if offsets.iter().any(|c| c.len() != n) {
            return Err(spec("linear drift offsets must have length n"));
        }
        let bound = matrices.iter().map(spectral_norm).fold(0.0, f64::max);
        Ok(Self { matrices, offsets, bound })
    }

    pub fn homogeneous(a: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![a], Vec::new())
    }

    fn matrix(&self, regime: usize) -> &DMatrix<f64> {
        &self.matrices[regime.min(self.matrices.len() - 1)]
    }
}

impl Drift for LinearDrift {
    fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }
    fn eval_into(&self, x: &DVector<f64>, regime: usize, out: &mut DVector<f64>) {
        out.gemv(1.0, self.matrix(regime), x, 0.0);
        if !self.offsets.is_empty() {
            *out += &self.offsets[regime.min(self.offsets.len() - 1)];
        }
    }
    fn jacobian_into(&self, _x: &DVector<f64>, regime: usize, out: &mut DMatrix<f64>) {
        out.copy_from(self.matrix(regime));
    }
    fn derivative_action(&self, _x: &DVector<f64>, regime: usize, dirs: &[&DVector<f64>]) -> Option<DVector<f64>> {
        Some(match dirs {
            [v] => self.matrix(regime) * *v,
            _ => DVector::zeros(self.dim()),
        })
    }
    fn max_derivative_order(&self) -> Option<usize> {
        None
    }
    fn jacobian_bound(&self) -> f64 {
        self.bound
    }
}

/// `b_k(x, i) = a_i · sin((M x)_k + φ_k)`: smooth with every derivative
/// bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct SinDrift {
    pub amplitudes: Vec<f64>,
    pub frequencies: DMatrix<f64>,
    pub phases: DVector<f64>,
    bound: f64,
}

impl SinDrift {
    pub fn new(amplitudes: Vec<f64>, frequencies: DMatrix<f64>, phases: DVector<f64>) -> Result<Self> {
        let n = frequencies.nrows();
        if amplitudes.is_empty() || frequencies.ncols() != n || phases.len() != n {
            return Err(spec("sin drift needs amplitudes, an n×n frequency matrix and n phases"));
        }
        // ∇b = a·diag(cos θ)·M, so ‖∇b‖ ≤ |a|·‖M‖
        let bound = amplitudes.iter().map(|a| a.abs()).fold(0.0, f64::max) * spectral_norm(&frequencies);
        Ok(Self { amplitudes, frequencies, phases, bound })
    }

    fn amplitude(&self, regime: usize) -> f64 {
        self.amplitudes[regime.min(self.amplitudes.len() - 1)]
    }

    fn angles(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.frequencies * x + &self.phases
    }
}

impl Drift for SinDrift {
    fn dim(&self) -> usize {
        self.frequencies.nrows()
    }
    fn eval_into(&self, x: &DVector<f64>, regime: usize, out: &mut DVector<f64>) {
        let a = self.amplitude(regime);
        out.gemv(1.0, &self.frequencies, x, 0.0);
        for (o, p) in out.iter_mut().zip(self.phases.iter()) {
            *o = a * (*o + p).sin();
        }
    }
    fn jacobian_into(&self, x: &DVector<f64>, regime: usize, out: &mut DMatrix<f64>) {
        let a = self.amplitude(regime);
        let theta = self.angles(x);
        out.copy_from(&self.frequencies);
        for (k, th) in theta.iter().enumerate() {
            let c = a * th.cos();
            out.row_mut(k).scale_mut(c);
        }
    }
    fn derivative_action(&self, x: &DVector<f64>, regime: usize, dirs: &[&DVector<f64>]) -> Option<DVector<f64>> {
        let a = self.amplitude(regime);
        let m = dirs.len();
        let theta = self.angles(x);
        let projected: Vec<DVector<f64>> = dirs.iter().map(|v| &self.frequencies * *v).collect();
        let shift = m as f64 * std::f64::consts::FRAC_PI_2;
        Some(DVector::from_fn(self.dim(), |k, _| a * (theta[k] + shift).sin() * projected.iter().map(|p| p[k]).product::<f64>()))
    }
    fn max_derivative_order(&self) -> Option<usize> {
        None
    }
    fn jacobian_bound(&self) -> f64 {
        self.bound
    }
}

/// Everything needed to integrate the coupled system except the driver.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub drift: Arc<dyn Drift>,
    /// Constant `n×d` diffusion.
    pub sigma: DMatrix<f64>,
    pub rates: RateMatrixSpec,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, drift: Arc<dyn Drift>, sigma: DMatrix<f64>, rates: RateMatrixSpec) -> Result<Self> {
        let m = Self { name: name.into(), drift, sigma, rates };
        m.validate_shapes()?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn d(&self) -> usize {
        self.sigma.ncols()
    }

    pub fn jacobian_bound(&self) -> f64 {
        self.drift.jacobian_bound()
    }

    pub fn has_constant_rates(&self) -> bool {
        self.rates.rates.is_constant()
    }

    fn validate_shapes(&self) -> Result<()> {
        if self.sigma.nrows() == 0 || self.sigma.ncols() == 0 {
            return Err(spec("σ must be a nonempty n×d matrix"));
        }
        if self.drift.dim() != self.n() {
            return Err(spec(format!("drift dimension {} does not match σ rows {}", self.drift.dim(), self.n())));
        }
        if self.sigma.iter().any(|v| !v.is_finite()) {
            return Err(spec("σ has non-finite entries"));
        }
        Ok(())
    }

    /// Compares `∇b` against central differences of `b` at the given points.
    pub fn check_jacobian(&self, points: &[DVector<f64>]) -> Result<f64> {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for x in points {
            for i in 0..self.rates.states() {
                let jac = self.drift.jacobian(x, i);
                for col in 0..n {
                    let h = 1e-6 * (1.0 + x[col].abs());
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[col] += h;
                    xm[col] -= h;
                    let fd = (self.drift.eval(&xp, i) - self.drift.eval(&xm, i)) / (2.0 * h);
                    for row in 0..n {
                        let err = (fd[row] - jac[(row, col)]).abs() / (1.0 + jac[(row, col)].abs());
                        worst = worst.max(err);
                        if err > 1e-5 {
                            return Err(spec(format!("∇b[{row},{col}] disagrees with finite differences at x = {:?}, regime {i}", x.as_slice())));
                        }
                    }
                }
            }
        }
        Ok(worst)
    }
}

/// Built-in models.
pub mod presets {
    use super::*;
    use crate::switching::ConstantRates;

    pub const NAMES: [&str; 6] = ["zero_drift", "linear", "sin_bounded", "two_regime_linear", "kalman", "degenerate"];

    fn single_state() -> RateMatrixSpec {
        RateMatrixSpec::constant(DMatrix::zeros(1, 1)).expect("zero rates are valid")
    }

    fn pair(lambda: f64) -> Result<RateMatrixSpec> {
        RateMatrixSpec::constant(ConstantRates::symmetric_pair(lambda).q)
    }

    /// `b ≡ 0`, `σ = I_n`.
    pub fn zero_drift(n: usize) -> Result<ModelSpec> {
        ModelSpec::new("zero_drift", Arc::new(ZeroDrift { n }), DMatrix::identity(n, n), single_state())
    }

    /// `b(x) = A x`, single regime.
    pub fn linear(a: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<ModelSpec> {
        ModelSpec::new("linear", Arc::new(LinearDrift::homogeneous(a)?), sigma, single_state())
    }

    /// `b(x) = A x` with `A = [[0,1],[0,0]]`, `σ = (0,1)ᵀ`.
    pub fn kalman() -> Result<ModelSpec> {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let sigma = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        ModelSpec::new("kalman", Arc::new(LinearDrift::homogeneous(a)?), sigma, single_state())
    }

    /// `b ≡ 0`, `σ = (0,1)ᵀ`: no bracket ever fills `e₁`.
    pub fn degenerate() -> Result<ModelSpec> {
        ModelSpec::new("degenerate", Arc::new(ZeroDrift { n: 2 }), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), single_state())
    }

    /// Two linear regimes with symmetric constant switching rate `λ`.
    pub fn two_regime_linear(lambda: f64) -> Result<ModelSpec> {
        let a0 = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -0.5]);
        let a1 = DMatrix::from_row_slice(2, 2, &[-0.5, 0.0, 1.0, -1.0]);
        let drift = LinearDrift::new(vec![a0, a1], Vec::new())?;
        ModelSpec::new("two_regime_linear", Arc::new(drift), DMatrix::identity(2, 2), pair(lambda)?)
    }

    /// Bounded smooth drift `a_i sin(M x + φ)` in two regimes.
    pub fn sin_bounded(lambda: f64) -> Result<ModelSpec> {
        let drift = SinDrift::new(vec![1.0, 0.5], DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]), DVector::from_vec(vec![0.3, -0.2]))?;
        ModelSpec::new("sin_bounded", Arc::new(drift), DMatrix::identity(2, 2), pair(lambda)?)
    }

    /// Preset by name with default parameters.
    pub fn by_name(name: &str) -> Result<ModelSpec> {
        match name {
            "zero_drift" => zero_drift(1),
            "linear" => linear(DMatrix::from_element(1, 1, -1.0), DMatrix::identity(1, 1)),
            "sin_bounded" => sin_bounded(1.0),
            "two_regime_linear" => two_regime_linear(1.0),
            "kalman" => kalman(),
            "degenerate" => degenerate(),
            other => Err(spec(format!("unknown model '{other}', expected one of {NAMES:?}"))),
        }
    }
}

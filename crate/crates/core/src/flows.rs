//! Variational flows `J`, `K`, the directional derivative `D^h X` and the
//! Malliavin covariance along a simulated path.

use nalgebra::{DMatrix, DVector};

use crate::error::{argument, Error, Result};
use crate::levy::least_squares_slope;
use crate::model::{spectral_norm, ModelSpec};
use crate::sde::{simulate_perturbed_path, CoupledPath, PerturbationSpec, StepFunction};

/// `J_{t_k}` and `K_{t_k}` at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub j: Vec<DMatrix<f64>>,
    pub k: Vec<DMatrix<f64>>,
}

impl FlowRecord {
    /// `max_k ‖J_k K_k − I‖_F`.
    pub fn inverse_defect(&self) -> f64 {
        let n = self.j.first().map_or(0, |m| m.nrows());
        let id = DMatrix::<f64>::identity(n, n);
        self.j.iter().zip(&self.k).map(|(j, k)| (j * k - &id).norm()).fold(0.0, f64::max)
    }

    /// `max_k max(‖J_k‖, ‖K_k‖) e^{-L t_k}` in the operator norm.
    pub fn normalized_growth(&self, times: &[f64], bound: f64) -> f64 {
        self.j.iter().zip(&self.k).zip(times).map(|((j, k), t)| spectral_norm(j).max(spectral_norm(k)) * (-bound * t).exp()).fold(0.0, f64::max)
    }
}

/// `10 n ‖∇b‖² e^{2‖∇b‖t} Δt`.
pub fn inverse_defect_threshold(n: usize, bound: f64, t: f64, dt: f64) -> f64 {
    10.0 * n as f64 * bound * bound * (2.0 * bound * t).exp() * dt
}

fn check_finite(m: &DMatrix<f64>, step: usize, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { step, message: format!("{what} has non-finite entries") })
    }
}

/// Streams `(k, ∇b(X_k, α_k), Δt_k)` over the cells of a path.
fn for_each_cell<F>(model: &ModelSpec, path: &CoupledPath, mut f: F) -> Result<()>
where
    F: FnMut(usize, &DMatrix<f64>, f64) -> Result<()>,
{
    let n = model.n();
    let mut grad = DMatrix::zeros(n, n);
    for k in 0..path.times.len().saturating_sub(1) {
        model.drift.jacobian_into(&path.x[k], path.regimes[k], &mut grad);
        f(k, &grad, path.times[k + 1] - path.times[k])?;
    }
    Ok(())
}

/// `J_{k+1} = J_k + ∇b J_k Δt`, `K_{k+1} = K_k − K_k ∇b Δt`.
pub fn evolve_flows(model: &ModelSpec, path: &CoupledPath) -> Result<FlowRecord> {
    let n = model.n();
    let nodes = path.times.len();
    let mut j = DMatrix::<f64>::identity(n, n);
    let mut k = DMatrix::<f64>::identity(n, n);
    let mut js = Vec::with_capacity(nodes);
    let mut ks = Vec::with_capacity(nodes);
    js.push(j.clone());
    ks.push(k.clone());
    let mut tmp = DMatrix::zeros(n, n);
    for_each_cell(model, path, |step, grad, dt| {
        tmp.gemm(dt, grad, &j, 0.0);
        j += &tmp;
        tmp.gemm(dt, &k, grad, 0.0);
        k -= &tmp;
        check_finite(&j, step + 1, "J")?;
        check_finite(&k, step + 1, "K")?;
        js.push(j.clone());
        ks.push(k.clone());
        Ok(())
    })?;
    Ok(FlowRecord { j: js, k: ks })
}

/// Euler recursion for `D^h X` forced by `σ Δ(∫₀^S h)`.
pub fn directional_derivative(model: &ModelSpec, path: &CoupledPath, h: &StepFunction) -> Result<Vec<DVector<f64>>> {
    if h.dim() != model.d() {
        return Err(argument(format!("h has dimension {}, driver dimension is {}", h.dim(), model.d())));
    }
    let forcing = h.increments_along(&path.s);
    let mut v = DVector::zeros(model.n());
    let mut tmp = DVector::zeros(model.n());
    let mut out = Vec::with_capacity(path.times.len());
    out.push(v.clone());
    for_each_cell(model, path, |step, grad, dt| {
        tmp.gemv(dt, grad, &v, 0.0);
        v += &tmp;
        v.gemv(1.0, &model.sigma, &forcing[step], 1.0);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric { step: step + 1, message: "D^h X has non-finite entries".into() });
        }
        out.push(v.clone());
        Ok(())
    })?;
    Ok(out)
}

/// `max_k |K_k D^h X_k − Σ_{l<k} K_l σ ΔH_l|`.
pub fn representation_residual(model: &ModelSpec, path: &CoupledPath, flows: &FlowRecord, h: &StepFunction, dh: &[DVector<f64>]) -> f64 {
    let forcing = h.increments_along(&path.s);
    let mut sum = DVector::zeros(model.n());
    let mut worst: f64 = 0.0;
    for k in 0..dh.len() {
        worst = worst.max((&flows.k[k] * &dh[k] - &sum).amax());
        if k < forcing.len() {
            sum += &flows.k[k] * (&model.sigma * &forcing[k]);
        }
    }
    worst
}

/// `Q_k = Σ_{l<k} K_l σσ* K_l* ΔS_l` and `M_k = J_k Q_k J_k*`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceRecord {
    pub q: Vec<DMatrix<f64>>,
    pub m: Vec<DMatrix<f64>>,
}

impl CovarianceRecord {
    pub fn terminal_m(&self) -> &DMatrix<f64> {
        self.m.last().expect("records have at least one node")
    }
}

pub fn reduced_covariance(model: &ModelSpec, path: &CoupledPath, flows: &FlowRecord) -> Result<CovarianceRecord> {
    let n = model.n();
    if flows.k.len() != path.times.len() {
        return Err(argument("flows and path live on different grids"));
    }
    let mut q = DMatrix::zeros(n, n);
    let mut qs = Vec::with_capacity(path.times.len());
    let mut ms = Vec::with_capacity(path.times.len());
    qs.push(q.clone());
    ms.push(q.clone());
    for k in 0..path.times.len() - 1 {
        let ds = path.s[k + 1] - path.s[k];
        if ds != 0.0 {
            let ks = &flows.k[k] * &model.sigma;
            q.gemm(ds, &ks, &ks.transpose(), 1.0);
        }
        check_finite(&q, k + 1, "Q")?;
        let j = &flows.j[k + 1];
        qs.push(q.clone());
        ms.push(j * &q * j.transpose());
    }
    Ok(CovarianceRecord { q: qs, m: ms })
}

/// Terminal `(J_T, Q_T)` without storing the intermediate flow.
pub fn terminal_covariance(model: &ModelSpec, path: &CoupledPath) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = model.n();
    let mut j = DMatrix::<f64>::identity(n, n);
    let mut k = DMatrix::<f64>::identity(n, n);
    let mut q = DMatrix::zeros(n, n);
    let mut tmp = DMatrix::zeros(n, n);
    let mut ks = DMatrix::zeros(n, model.d());
    for_each_cell(model, path, |step, grad, dt| {
        let ds = path.s[step + 1] - path.s[step];
        if ds != 0.0 {
            ks.gemm(1.0, &k, &model.sigma, 0.0);
            q.gemm(ds, &ks, &ks.transpose(), 1.0);
        }
        tmp.gemm(dt, grad, &j, 0.0);
        j += &tmp;
        tmp.gemm(dt, &k, grad, 0.0);
        k -= &tmp;
        check_finite(&q, step + 1, "Q")?;
        check_finite(&k, step + 1, "K")
    })?;
    Ok((j, q))
}

/// Terminal `J_T` alone.
pub fn terminal_jacobian(model: &ModelSpec, path: &CoupledPath) -> Result<DMatrix<f64>> {
    let n = model.n();
    let mut j = DMatrix::<f64>::identity(n, n);
    let mut tmp = DMatrix::zeros(n, n);
    for_each_cell(model, path, |step, grad, dt| {
        tmp.gemm(dt, grad, &j, 0.0);
        j += &tmp;
        check_finite(&j, step + 1, "J")
    })?;
    Ok(j)
}

/// Smooth test function `f(x, i)` with its gradient.
pub trait Observable: Send + Sync {
    fn value(&self, x: &DVector<f64>, regime: usize) -> f64;
    fn gradient(&self, x: &DVector<f64>, regime: usize) -> DVector<f64>;
}

/// `f(x) = v·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObservable {
    pub v: DVector<f64>,
}

impl Observable for LinearObservable {
    fn value(&self, x: &DVector<f64>, _regime: usize) -> f64 {
        self.v.dot(x)
    }
    fn gradient(&self, _x: &DVector<f64>, _regime: usize) -> DVector<f64> {
        self.v.clone()
    }
}

/// `f(x) = exp(−|x − c|² / 2w²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBump {
    pub center: DVector<f64>,
    pub width: f64,
}

impl Observable for GaussianBump {
    fn value(&self, x: &DVector<f64>, _regime: usize) -> f64 {
        (-(x - &self.center).norm_squared() / (2.0 * self.width * self.width)).exp()
    }
    fn gradient(&self, x: &DVector<f64>, regime: usize) -> DVector<f64> {
        let w2 = self.width * self.width;
        (x - &self.center) * (-self.value(x, regime) / w2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDifferenceReport {
    pub epsilons: Vec<f64>,
    /// `max_t |(X^{εh}_t − X_t)/ε − D^h X_t|_∞`.
    pub residuals: Vec<f64>,
    /// `max_t |(f(X^{εh}_t) − f(X_t))/ε − ∇f · D^h X_t|`, when `f` is given.
    pub chain_residuals: Vec<f64>,
    /// Log-log slope of residual against ε (NaN if any residual is 0).
    pub slope: f64,
}

/// Compares difference quotients of the perturbed path with `D^h X`.
pub fn finite_difference_check(
    model: &ModelSpec,
    path: &CoupledPath,
    h: &StepFunction,
    epsilons: &[f64],
    f: Option<&dyn Observable>,
) -> Result<FiniteDifferenceReport> {
    if !model.has_constant_rates() {
        return Err(Error::Unsupported("finite-difference check needs constant switching rates; state-dependent rates make the quotient discontinuous".into()));
    }
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(argument("ε values must be positive"));
    }
    let dh = directional_derivative(model, path, h)?;
    let mut residuals = Vec::with_capacity(epsilons.len());
    let mut chain = Vec::new();
    for &eps in epsilons {
        let pert = simulate_perturbed_path(model, path, &PerturbationSpec { h: h.clone(), epsilon: eps })?;
        let mut worst: f64 = 0.0;
        let mut worst_chain: f64 = 0.0;
        for k in 0..path.times.len() {
            let quotient = (&pert.x[k] - &path.x[k]) / eps;
            worst = worst.max((&quotient - &dh[k]).amax());
            if let Some(f) = f {
                let i = path.regimes[k];
                let lhs = (f.value(&pert.x[k], pert.regimes[k]) - f.value(&path.x[k], i)) / eps;
                let rhs = f.gradient(&path.x[k], i).dot(&dh[k]);
                worst_chain = worst_chain.max((lhs - rhs).abs());
            }
        }
        residuals.push(worst);
        if f.is_some() {
            chain.push(worst_chain);
        }
    }
    let slope = if residuals.iter().all(|r| *r > 0.0) {
        let pts: Vec<(f64, f64)> = epsilons.iter().zip(&residuals).map(|(e, r)| (e.ln(), r.ln())).collect();
        least_squares_slope(&pts)
    } else {
        f64::NAN
    };
    Ok(FiniteDifferenceReport { epsilons: epsilons.to_vec(), residuals, chain_residuals: chain, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyMeasureSpec;
    use crate::model::{LinearDrift, SinDrift, ZeroDrift};
    use crate::sde::{simulate_path, SimulationSpec};
    use crate::switching::RateMatrixSpec;
    use std::sync::Arc;

    fn model(drift: Arc<dyn crate::model::Drift>, sigma: DMatrix<f64>) -> ModelSpec {
        ModelSpec::new("t", drift, sigma, RateMatrixSpec::constant(DMatrix::zeros(1, 1)).unwrap()).unwrap()
    }

    fn run(m: &ModelSpec, dt: f64, seed: u64) -> CoupledPath {
        let sim = SimulationSpec::new(DVector::from_element(m.n(), 0.5), 0, 1.0, dt, LevyMeasureSpec::stable(1.0));
        simulate_path(m, &sim, seed).unwrap()
    }

    #[test]
    fn driftless_flows_are_identity() {
        let m = model(Arc::new(ZeroDrift { n: 2 }), DMatrix::identity(2, 2));
        let p = run(&m, 0.01, 1);
        let f = evolve_flows(&m, &p).unwrap();
        assert!(f.j.iter().chain(&f.k).all(|a| *a == DMatrix::identity(2, 2)));
        let c = reduced_covariance(&m, &p, &f).unwrap();
        for (k, mk) in c.m.iter().enumerate() {
            assert!((mk - DMatrix::identity(2, 2) * p.s[k]).amax() <= 1e-12 * (1.0 + p.s[k]));
        }
    }

    #[test]
    fn nilpotent_flow_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let m = model(Arc::new(LinearDrift::homogeneous(a.clone()).unwrap()), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
        let p = run(&m, 0.01, 2);
        let f = evolve_flows(&m, &p).unwrap();
        let expect = DMatrix::identity(2, 2) + &a;
        assert!((f.j.last().unwrap() - expect).amax() < 1e-12);
    }

    #[test]
    fn inverse_defect_shrinks_with_step() {
        let m = model(Arc::new(LinearDrift::homogeneous(DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.2, -0.3])).unwrap()), DMatrix::identity(2, 2));
        let d1 = evolve_flows(&m, &run(&m, 0.02, 3)).unwrap().inverse_defect();
        let d2 = evolve_flows(&m, &run(&m, 0.01, 3)).unwrap().inverse_defect();
        assert!((d1 / d2 - 2.0).abs() < 0.2, "{d1} {d2}");
    }

    #[test]
    fn driftless_directional_derivative() {
        let m = model(Arc::new(ZeroDrift { n: 2 }), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 1.0]));
        let p = run(&m, 0.01, 4);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let h = StepFunction::indicator(1.0, e1.clone()).unwrap();
        let dh = directional_derivative(&m, &p, &h).unwrap();
        for k in 0..p.times.len() {
            let expect = &m.sigma * &e1 * p.s[k].min(1.0);
            assert!((&dh[k] - expect).amax() < 1e-12);
        }
        let zero = directional_derivative(&m, &p, &StepFunction::zero(2)).unwrap();
        assert!(zero.iter().all(|v| v.amax() == 0.0));
        let fd = finite_difference_check(&m, &p, &h, &[0.1, 0.01], None).unwrap();
        assert!(fd.residuals.iter().all(|r| *r < 1e-12));
    }

    #[test]
    fn ou_covariance_matches_resummation() {
        let m = model(Arc::new(LinearDrift::homogeneous(DMatrix::from_element(1, 1, -1.0)).unwrap()), DMatrix::identity(1, 1));
        let p = run(&m, 0.01, 5);
        let f = evolve_flows(&m, &p).unwrap();
        let c = reduced_covariance(&m, &p, &f).unwrap();
        // Euler gives K_k = Π_{l<k} (1 + Δt_l) for b = −x
        let mut kk = 1.0;
        let mut sum = 0.0;
        let mut continuous = 0.0;
        for k in 0..p.times.len() - 1 {
            let ds = p.s[k + 1] - p.s[k];
            sum += kk * kk * ds;
            continuous += (2.0 * p.times[k]).exp() * ds;
            kk *= 1.0 + (p.times[k + 1] - p.times[k]);
        }
        let q = c.q.last().unwrap()[(0, 0)];
        assert!((q - sum).abs() <= 1e-12 * sum.max(1.0));
        assert!((q - continuous).abs() <= 0.05 * continuous);
        let (_, qt) = terminal_covariance(&m, &p).unwrap();
        assert!((qt[(0, 0)] - q).abs() <= 1e-12 * q.max(1.0));
    }

    #[test]
    fn sin_model_residual_is_first_order() {
        let drift = SinDrift::new(vec![1.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]), DVector::from_vec(vec![0.2, 0.1])).unwrap();
        let m = model(Arc::new(drift), DMatrix::identity(2, 2));
        let p = run(&m, 0.01, 6);
        let h = StepFunction::indicator(1.0, DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let v = LinearObservable { v: DVector::from_vec(vec![1.0, 0.0]) };
        let fd = finite_difference_check(&m, &p, &h, &[1e-1, 1e-2, 1e-3, 1e-4], Some(&v)).unwrap();
        assert!((0.9..=1.1).contains(&fd.slope), "slope {}", fd.slope);
        for (c, r) in fd.chain_residuals.iter().zip(&fd.residuals) {
            assert!(c <= r);
        }
    }
}

//! Lie brackets `B_1 = σ`, `B_{j+1} = [b, B_j]` (column-wise) and sampled
//! estimates of the uniform Hörmander constant `κ₁`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{argument, spec, Result};
use crate::model::ModelSpec;
use crate::rng::{self, streams};

/// `κ₁` at or below this value counts as a failed condition.
pub const KAPPA_TOLERANCE: f64 = 1e-10;

/// `[b, V] = (∇V) b − (∇b) V` for one column field.
pub fn lie_bracket(b: &DVector<f64>, grad_b: &DMatrix<f64>, v: &DVector<f64>, grad_v: &DMatrix<f64>) -> DVector<f64> {
    grad_v * b - grad_b * v
}

/// Column-wise bracket of a matrix field; `grad_v[k]` is the Jacobian of
/// column `k`.
pub fn lie_bracket_matrix(b: &DVector<f64>, grad_b: &DMatrix<f64>, v: &DMatrix<f64>, grad_v: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(v.nrows(), v.ncols());
    for (k, g) in grad_v.iter().enumerate().take(v.ncols()) {
        out.set_column(k, &lie_bracket(b, grad_b, &v.column(k).into_owned(), g));
    }
    out
}

/// Vector field built from `b`, its derivatives and constants.
#[derive(Debug, Clone, PartialEq)]
enum Field {
    Const(DVector<f64>),
    /// `∇^m b[args]` with `m = args.len()`; `m = 0` is `b` itself.
    Deriv(Vec<Field>),
    Sum(Vec<Field>),
    Neg(Box<Field>),
}

impl Field {
    fn zero() -> Self {
        Field::Sum(Vec::new())
    }

    fn is_zero(&self) -> bool {
        match self {
            Field::Const(c) => c.iter().all(|v| *v == 0.0),
            Field::Sum(terms) => terms.iter().all(Field::is_zero),
            Field::Neg(f) => f.is_zero(),
            Field::Deriv(args) => args.iter().any(Field::is_zero),
        }
    }

    fn sum(terms: Vec<Field>) -> Self {
        let kept: Vec<Field> = terms.into_iter().filter(|t| !t.is_zero()).collect();
        if kept.len() == 1 {
            kept.into_iter().next().unwrap()
        } else {
            Field::Sum(kept)
        }
    }

    /// `∇F · w`.
    fn directional(&self, w: &Field) -> Field {
        match self {
            Field::Const(_) => Field::zero(),
            Field::Sum(terms) => Field::sum(terms.iter().map(|t| t.directional(w)).collect()),
            Field::Neg(f) => {
                let d = f.directional(w);
                if d.is_zero() {
                    d
                } else {
                    Field::Neg(Box::new(d))
                }
            }
            Field::Deriv(args) => {
                let mut extended = args.clone();
                extended.push(w.clone());
                let mut terms = vec![Field::Deriv(extended)];
                for r in 0..args.len() {
                    let inner = args[r].directional(w);
                    if inner.is_zero() {
                        continue;
                    }
                    let mut replaced = args.clone();
                    replaced[r] = inner;
                    terms.push(Field::Deriv(replaced));
                }
                Field::sum(terms)
            }
        }
    }

    /// Highest derivative order of `b` appearing in the expression.
    fn order(&self) -> usize {
        match self {
            Field::Const(_) => 0,
            Field::Sum(terms) => terms.iter().map(Field::order).max().unwrap_or(0),
            Field::Neg(f) => f.order(),
            Field::Deriv(args) => args.iter().map(Field::order).max().unwrap_or(0).max(args.len()),
        }
    }

    fn eval(&self, model: &ModelSpec, x: &DVector<f64>, regime: usize) -> DVector<f64> {
        match self {
            Field::Const(c) => c.clone(),
            Field::Sum(terms) => terms.iter().fold(DVector::zeros(model.n()), |acc, t| acc + t.eval(model, x, regime)),
            Field::Neg(f) => -f.eval(model, x, regime),
            Field::Deriv(args) => match args.len() {
                0 => model.drift.eval(x, regime),
                1 => model.drift.jacobian(x, regime) * args[0].eval(model, x, regime),
                _ => {
                    let vals: Vec<DVector<f64>> = args.iter().map(|a| a.eval(model, x, regime)).collect();
                    let refs: Vec<&DVector<f64>> = vals.iter().collect();
                    model.drift.derivative_action(x, regime, &refs).expect("derivative order checked when brackets were built")
                }
            },
        }
    }
}

fn bracket_with_drift(v: &Field) -> Field {
    let along = v.directional(&Field::Deriv(Vec::new()));
    let back = Field::Deriv(vec![v.clone()]);
    if back.is_zero() {
        return along;
    }
    Field::sum(vec![along, Field::Neg(Box::new(back))])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BracketMode {
    /// Exact derivatives of `b`; fails if the drift lacks them.
    Analytic,
    /// Central differences along `b`.
    FiniteDifference,
    /// Analytic when available, finite differences otherwise.
    Auto,
}

/// Evaluators for `B_1, …, B_{j₀}`.
#[derive(Debug, Clone)]
pub struct BracketSet {
    pub depth: usize,
    /// `true` when exact derivatives of `b` are used.
    pub analytic: bool,
    model: ModelSpec,
    /// Per level, one field per column of `σ` (analytic mode only).
    fields: Vec<Vec<Field>>,
}

pub fn build_brackets(model: &ModelSpec, depth: usize, mode: BracketMode) -> Result<BracketSet> {
    if depth == 0 {
        return Err(argument("bracket depth j₀ must be at least 1"));
    }
    let mut fields: Vec<Vec<Field>> = vec![model.sigma.column_iter().map(|c| Field::Const(c.into_owned())).collect()];
    for j in 1..depth {
        let next = fields[j - 1].iter().map(bracket_with_drift).collect();
        fields.push(next);
    }
    let needed = fields.iter().flatten().map(Field::order).max().unwrap_or(0);
    let available = model.drift.max_derivative_order().is_none_or(|m| m >= needed);
    let analytic = match mode {
        BracketMode::Analytic if !available => {
            return Err(spec(format!("depth {depth} needs derivatives of b up to order {needed}; enable finite-difference mode")))
        }
        BracketMode::Analytic => true,
        BracketMode::FiniteDifference => false,
        BracketMode::Auto => available,
    };
    if !analytic {
        fields.clear();
    }
    Ok(BracketSet { depth, analytic, model: model.clone(), fields })
}

impl BracketSet {
    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// `B_j(x, i)` for `j = 1..=depth`.
    pub fn eval_all(&self, x: &DVector<f64>, regime: usize) -> Vec<DMatrix<f64>> {
        (1..=self.depth).map(|j| self.eval(j, x, regime)).collect()
    }

    /// `B_j(x, i)` as an `n×d` matrix.
    pub fn eval(&self, j: usize, x: &DVector<f64>, regime: usize) -> DMatrix<f64> {
        assert!(j >= 1 && j <= self.depth, "bracket level {j} outside 1..={}", self.depth);
        if self.analytic {
            let cols: Vec<DVector<f64>> = self.fields[j - 1].iter().map(|f| f.eval(&self.model, x, regime)).collect();
            DMatrix::from_columns(&cols)
        } else {
            self.eval_fd(j, x, regime)
        }
    }

    fn eval_fd(&self, j: usize, x: &DVector<f64>, regime: usize) -> DMatrix<f64> {
        if j == 1 {
            return self.model.sigma.clone();
        }
        let b = self.model.drift.eval(x, regime);
        let grad_b = self.model.drift.jacobian(x, regime);
        let prev = self.eval_fd(j - 1, x, regime);
        let mut out = -(&grad_b * &prev);
        let speed = b.norm();
        if speed > 0.0 {
            let eta = 1e-5 * (1.0 + x.norm());
            let dir = &b * (eta / speed);
            let plus = self.eval_fd(j - 1, &(x + &dir), regime);
            let minus = self.eval_fd(j - 1, &(x - &dir), regime);
            out += (plus - minus) * (speed / (2.0 * eta));
        }
        out
    }
}

/// Axis-aligned sampling box for `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl SampleBox {
    pub fn cube(n: usize, half_width: f64) -> Self {
        Self { lower: DVector::from_element(n, -half_width), upper: DVector::from_element(n, half_width) }
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton points mapped into the box; the first point is the box center.
pub fn halton_points(domain: &SampleBox, count: usize) -> Vec<DVector<f64>> {
    let n = domain.lower.len();
    (0..count)
        .map(|k| {
            DVector::from_fn(n, |c, _| {
                let u = if k == 0 { 0.5 } else { radical_inverse(k as u64, PRIMES[c % PRIMES.len()]) };
                domain.lower[c] + u * (domain.upper[c] - domain.lower[c])
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaEstimate {
    /// `min_{x,i,v} Σ_j |v* B_j(x,i)|²` over the evaluated points.
    pub kappa: f64,
    pub witness_x: DVector<f64>,
    pub witness_regime: usize,
    pub witness_v: DVector<f64>,
    /// `|v* B_j|²` per level at the witness.
    pub contributions: Vec<f64>,
    /// Estimate using levels `1..=j` only, for each `j`.
    pub per_depth: Vec<f64>,
    /// Minimum over sphere samples (never below `kappa` up to rounding).
    pub sphere_minimum: f64,
    pub depth: usize,
    pub x_samples: usize,
    pub sphere_samples: usize,
    pub holds: bool,
}

fn canonical_sign(mut v: DVector<f64>) -> DVector<f64> {
    if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
    v
}

fn min_eigen(gram: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(gram.clone());
    let (idx, val) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |b, (i, v)| if *v < b.1 { (i, *v) } else { b });
    (val.max(0.0), canonical_sign(eig.eigenvectors.column(idx).into_owned()))
}

pub fn estimate_kappa1(brackets: &BracketSet, domain: &SampleBox, x_samples: usize, sphere_samples: usize, seed: u64) -> Result<KappaEstimate> {
    let model = brackets.model();
    let n = model.n();
    if x_samples == 0 || sphere_samples == 0 {
        return Err(argument("sample counts must be at least 1"));
    }
    if domain.lower.len() != n || domain.upper.len() != n || domain.lower.iter().zip(domain.upper.iter()).any(|(a, b)| !(a <= b)) {
        return Err(argument("sampling box must have n ordered bounds"));
    }
    let mut rng = rng::stream_rng(seed, streams::SPHERE);
    let sphere: Vec<DVector<f64>> = (0..sphere_samples)
        .map(|_| loop {
            let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let norm: f64 = v.norm();
            if norm > 1e-12 {
                break v / norm;
            }
        })
        .collect();

    let depth = brackets.depth;
    let mut per_depth = vec![f64::INFINITY; depth];
    let mut best = (f64::INFINITY, DVector::zeros(n), 0usize, DVector::zeros(n), Vec::new());
    let mut sphere_minimum = f64::INFINITY;
    for x in halton_points(domain, x_samples) {
        for i in 0..model.rates.states() {
            let bs = brackets.eval_all(&x, i);
            let mut gram = DMatrix::zeros(n, n);
            for (j, b) in bs.iter().enumerate() {
                gram.gemm(1.0, b, &b.transpose(), 1.0);
                let (lambda, v) = min_eigen(&gram);
                per_depth[j] = per_depth[j].min(lambda);
                if j + 1 == depth && lambda < best.0 {
                    let contributions = bs.iter().map(|b| (b.transpose() * &v).norm_squared()).collect();
                    best = (lambda, x.clone(), i, v, contributions);
                }
            }
            for v in &sphere {
                sphere_minimum = sphere_minimum.min((v.transpose() * &gram * v)[(0, 0)]);
            }
        }
    }
    let (kappa, witness_x, witness_regime, witness_v, contributions) = best;
    Ok(KappaEstimate {
        kappa,
        witness_x,
        witness_regime,
        witness_v,
        contributions,
        per_depth,
        sphere_minimum,
        depth,
        x_samples,
        sphere_samples,
        holds: kappa > KAPPA_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, LinearDrift, SinDrift, ZeroDrift};
    use crate::switching::RateMatrixSpec;
    use std::sync::Arc;

    #[test]
    fn constant_field_bracket() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let x = DVector::from_vec(vec![0.3, 0.7]);
        let v = DVector::from_vec(vec![1.0, -2.0]);
        let out = lie_bracket(&(&a * &x), &a, &v, &DMatrix::zeros(2, 2));
        assert!((out + &a * &v).amax() < 1e-15);
        let zero = lie_bracket(&v, &DMatrix::zeros(2, 2), &x, &DMatrix::zeros(2, 2));
        assert_eq!(zero.amax(), 0.0);
    }

    #[test]
    fn linear_fields_commutator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 0.3]);
        let b = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.4, -1.0]);
        let x = DVector::from_vec(vec![0.9, -0.4]);
        let out = lie_bracket(&(&a * &x), &a, &(&b * &x), &b);
        let expect = &b * &a * &x - &a * &b * &x;
        assert!((out - expect).amax() < 1e-14);
    }

    #[test]
    fn kalman_second_bracket() {
        let m = presets::kalman().unwrap();
        let set = build_brackets(&m, 2, BracketMode::Analytic).unwrap();
        let x = DVector::from_vec(vec![3.0, -2.0]);
        assert_eq!(set.eval(1, &x, 0), m.sigma);
        assert_eq!(set.eval(2, &x, 0), DMatrix::from_column_slice(2, 1, &[-1.0, 0.0]));
        let est = estimate_kappa1(&set, &SampleBox::cube(2, 2.0), 32, 64, 1).unwrap();
        assert!((est.kappa - 1.0).abs() < 1e-12);
        assert!(est.holds);
    }

    #[test]
    fn zero_drift_brackets_vanish() {
        let m = ModelSpec::new("z", Arc::new(ZeroDrift { n: 2 }), DMatrix::identity(2, 2), RateMatrixSpec::constant(DMatrix::zeros(1, 1)).unwrap()).unwrap();
        let set = build_brackets(&m, 3, BracketMode::Analytic).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(set.eval(1, &x, 0), DMatrix::identity(2, 2));
        assert_eq!(set.eval(2, &x, 0).amax(), 0.0);
        assert_eq!(set.eval(3, &x, 0).amax(), 0.0);
        let est = estimate_kappa1(&set, &SampleBox::cube(2, 1.0), 4, 16, 1).unwrap();
        assert!((est.kappa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_direction_is_reported() {
        let m = presets::degenerate().unwrap();
        let set = build_brackets(&m, 4, BracketMode::Analytic).unwrap();
        let est = estimate_kappa1(&set, &SampleBox::cube(2, 1.0), 8, 16, 1).unwrap();
        assert!(est.kappa <= KAPPA_TOLERANCE);
        assert!(!est.holds);
        assert!((est.witness_v.clone() - DVector::from_vec(vec![1.0, 0.0])).amax() < 1e-12);
    }

    #[test]
    fn linear_modes_agree() {
        let a = DMatrix::from_row_slice(2, 2, &[0.2, 1.0, -0.7, 0.1]);
        let m = presets::linear(a, DMatrix::from_column_slice(2, 1, &[0.3, 1.0])).unwrap();
        let exact = build_brackets(&m, 3, BracketMode::Analytic).unwrap();
        let fd = build_brackets(&m, 3, BracketMode::FiniteDifference).unwrap();
        let x = DVector::from_vec(vec![0.5, -1.0]);
        for j in 1..=3 {
            assert!((exact.eval(j, &x, 0) - fd.eval(j, &x, 0)).amax() < 1e-6);
        }
    }

    #[test]
    fn sin_modes_agree_on_third_bracket() {
        let drift = SinDrift::new(vec![0.8], DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, -0.6]), DVector::from_vec(vec![0.1, 0.4])).unwrap();
        let m = ModelSpec::new("s", Arc::new(drift), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), RateMatrixSpec::constant(DMatrix::zeros(1, 1)).unwrap())
            .unwrap();
        let exact = build_brackets(&m, 3, BracketMode::Analytic).unwrap();
        let fd = build_brackets(&m, 3, BracketMode::FiniteDifference).unwrap();
        let x = DVector::from_vec(vec![0.7, -0.2]);
        for j in 1..=3 {
            assert!((exact.eval(j, &x, 0) - fd.eval(j, &x, 0)).amax() < 1e-4, "level {j}");
        }
    }

    #[test]
    fn missing_derivatives_need_consent() {
        #[derive(Debug)]
        struct Opaque(LinearDrift);
        impl crate::model::Drift for Opaque {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn eval_into(&self, x: &DVector<f64>, i: usize, out: &mut DVector<f64>) {
                self.0.eval_into(x, i, out)
            }
            fn jacobian_into(&self, x: &DVector<f64>, i: usize, out: &mut DMatrix<f64>) {
                self.0.jacobian_into(x, i, out)
            }
            fn jacobian_bound(&self) -> f64 {
                self.0.jacobian_bound()
            }
        }
        let drift = Opaque(LinearDrift::homogeneous(DMatrix::identity(2, 2)).unwrap());
        let m = ModelSpec::new("o", Arc::new(drift), DMatrix::identity(2, 2), RateMatrixSpec::constant(DMatrix::zeros(1, 1)).unwrap()).unwrap();
        assert!(build_brackets(&m, 2, BracketMode::Analytic).is_ok());
        assert!(build_brackets(&m, 3, BracketMode::Analytic).is_err());
        assert!(!build_brackets(&m, 3, BracketMode::Auto).unwrap().analytic);
    }

    #[test]
    fn sphere_minimum_bounds_eigen_minimum() {
        let m = presets::two_regime_linear(1.0).unwrap();
        let set = build_brackets(&m, 2, BracketMode::Analytic).unwrap();
        let est = estimate_kappa1(&set, &SampleBox::cube(2, 1.0), 8, 512, 3).unwrap();
        assert!(est.sphere_minimum >= est.kappa - 1e-12);
        assert!(est.sphere_minimum - est.kappa < 0.05);
        assert!(est.per_depth.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }
}

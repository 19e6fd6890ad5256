//! Adaptive Gauss–Kronrod (7/15) quadrature with global error control.

use crate::error::{Error, Result};

pub const DEFAULT_ABS_TOL: f64 = 1e-10;
pub const DEFAULT_REL_TOL: f64 = 1e-10;
const MAX_INTERVALS: usize = 4000;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Integrates `f` over the finite interval `[a, b]`. Endpoints are never
/// evaluated, so integrable endpoint singularities are tolerated.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Argument(format!("finite interval required, got [{a}, {b}]")));
    }
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0 });
    }
    let mut intervals: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(64);
    let (v, e) = gk15(&f, a, b);
    intervals.push((a, b, v, e));
    loop {
        let total: f64 = intervals.iter().map(|iv| iv.2).sum();
        let err: f64 = intervals.iter().map(|iv| iv.3).sum();
        if !total.is_finite() {
            return Err(Error::Numeric { step: 0, message: "non-finite integrand".into() });
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(Quadrature { value: total, error: err });
        }
        if intervals.len() >= MAX_INTERVALS {
            return Ok(Quadrature { value: total, error: err });
        }
        let (idx, _) = intervals.iter().enumerate().fold((0, f64::MIN), |best, (i, iv)| if iv.3 > best.1 { (i, iv.3) } else { best });
        let (lo, hi, _, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval exhausted at machine precision
            let total: f64 = intervals.iter().map(|iv| iv.2).sum::<f64>() + gk15(&f, lo, hi).0;
            return Ok(Quadrature { value: total, error: err });
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

/// Integrates over `[a, ∞)`: `[a, a + 1]` directly, the rest through
/// `u = (a + 1) / s²`, which tames algebraic tails.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, abs_tol: f64, rel_tol: f64) -> Result<Quadrature> {
    let c = a + 1.0;
    let head = integrate(&f, a, c, 0.5 * abs_tol, rel_tol)?;
    let g = |s: f64| {
        let val = f(c / (s * s)) * 2.0 * c / (s * s * s);
        if val.is_finite() {
            val
        } else {
            0.0
        }
    };
    let tail = integrate(g, 0.0, 1.0, 0.5 * abs_tol, rel_tol)?;
    Ok(Quadrature { value: head.value + tail.value, error: head.error + tail.error })
}

/// Integrates over `(0, b]` through `u = v²`, which removes the
/// `u^{-1/2}`-type singularities carried by subordinator densities at 0.
pub fn integrate_from_zero<F: Fn(f64) -> f64>(f: F, b: f64, abs_tol: f64, rel_tol: f64) -> Result<Quadrature> {
    integrate(|v: f64| 2.0 * v * f(v * v), 0.0, b.sqrt(), abs_tol, rel_tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let q = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12, 1e-12).unwrap();
        assert!((q.value - 0.0).abs() < 1e-13);
    }

    #[test]
    fn square_root_singularity() {
        // ∫₀¹ u^{-1/2} du = 2
        let q = integrate_from_zero(|u| u.powf(-0.5), 1.0, 1e-12, 1e-12).unwrap();
        assert!((q.value - 2.0).abs() < 1e-10, "{}", q.value);
    }

    #[test]
    fn power_tail() {
        // ∫₁^∞ u^{-3/2} du = 2
        let q = integrate_to_infinity(|u| u.powf(-1.5), 1.0, 1e-11, 1e-11).unwrap();
        assert!((q.value - 2.0).abs() < 1e-8, "{}", q.value);
    }

    #[test]
    fn gaussian_mass() {
        let q = integrate(|x| (-0.5 * x * x).exp(), -10.0, 10.0, 1e-13, 1e-13).unwrap();
        assert!((q.value - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }
}

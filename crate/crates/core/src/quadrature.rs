//! Numerical integration used for kernel constants and variance integrals.
//!
//! All routines work in `f64` regardless of the pipeline scalar.

use crate::error::{EdgeError, Result};

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
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
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 50;

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * s;
        // Gauss nodes are the odd-indexed Kronrod nodes
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]` to
/// absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(EdgeError::Argument(format!(
            "integration bounds must be finite, got [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(0.0);
    }
    // start from a few panels so narrow features are not skipped
    let panels = 8;
    let step = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let lo = a + step * k as f64;
        let hi = if k + 1 == panels { b } else { lo + step };
        total += adapt(&f, lo, hi, tol / panels as f64, 0)?;
    }
    Ok(total)
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
    let (val, err) = gk15(f, a, b);
    if !val.is_finite() {
        return Err(EdgeError::Config(format!(
            "non-finite integrand on [{a}, {b}]"
        )));
    }
    if err <= tol.max(1e-15 * val.abs()) {
        return Ok(val);
    }
    if depth >= MAX_DEPTH {
        return Err(EdgeError::Config(format!(
            "quadrature did not converge on [{a}, {b}] (error estimate {err:e})"
        )));
    }
    let mid = 0.5 * (a + b);
    Ok(adapt(f, a, mid, 0.5 * tol, depth + 1)? + adapt(f, mid, b, 0.5 * tol, depth + 1)?)
}

/// Tensor-product midpoint rule on `[-1, 1]^2` with `points` nodes per axis.
///
/// The kernel integrands vanish with all derivatives at the boundary, so the
/// midpoint rule converges faster than any power of the node spacing.
pub fn integrate_square<F: Fn(f64, f64) -> f64>(f: F, points: usize) -> f64 {
    let step = 2.0 / points as f64;
    let nodes: Vec<f64> = (0..points).map(|k| -1.0 + (k as f64 + 0.5) * step).collect();
    let mut total = 0.0;
    for &z1 in &nodes {
        let mut row = 0.0;
        for &z2 in &nodes {
            row += f(z1, z2);
        }
        total += row;
    }
    total * step * step
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_integral() {
        let v = integrate(|x| (-x * x).exp(), -10.0, 10.0, 1e-12).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn degenerate_interval_is_zero() {
        assert_eq!(integrate(|x| x, 1.0, 1.0, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_integrand_is_config_error() {
        let err = integrate(|_| f64::NAN, 0.0, 1.0, 1e-10).unwrap_err();
        assert!(matches!(err, EdgeError::Config(_)));
    }

    #[test]
    fn square_rule_on_separable_bump() {
        let bump = |t: f64| {
            if t.abs() >= 1.0 {
                0.0
            } else {
                (-1.0 / (1.0 - t * t)).exp()
            }
        };
        let one_d = integrate(bump, -1.0, 1.0, 1e-13).unwrap();
        let two_d = integrate_square(|a, b| bump(a) * bump(b), 512);
        assert!((two_d - one_d * one_d).abs() < 1e-12);
    }
}

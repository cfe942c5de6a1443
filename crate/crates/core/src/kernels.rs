//! Smooth compactly supported kernels and the rotated difference kernel.
//!
//! Every univariate kernel here has the form `K(x) = c · p(x) · exp{-1/(1-x²)}`
//! on `(-1, 1)` and zero elsewhere, with `p` a polynomial. The even member
//! (`p ≡ 1`) smooths along the edge, the odd member (`p = x³ - x`) takes the
//! difference across it.

use serde::Serialize;

use crate::error::{EdgeError, Result};
use crate::quadrature::integrate;
use crate::scalar::Scalar;

/// Absolute tolerance for normalizing constants and kernel integrals.
pub const QUAD_TOL: f64 = 1e-10;

/// Tolerance used when checking the kernel conditions numerically.
pub const CHECK_TOL: f64 = 1e-8;

// exp(-1/u) for u below this is < 1e-260: treated as exactly zero, which
// also keeps the u^-k factors of the derivatives from overflowing.
const MIN_GAP: f64 = 1.0 / 600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

/// Bump factor `exp{-1/(1-x²)}` and its first three derivatives.
#[inline]
fn bump_derivs<T: Scalar>(x: T) -> Option<[T; 4]> {
    let one = T::one();
    let u = one - x * x;
    if x.abs() >= T::lit(1.0 - 1e-14) || u <= T::lit(MIN_GAP) {
        return None;
    }
    let inv = one / u;
    let b = (-inv).exp();
    let two = T::lit(2.0);
    // g = -1/u; b = exp(g)
    let inv2 = inv * inv;
    let inv3 = inv2 * inv;
    let g1 = -two * x * inv2;
    let g2 = -two * inv2 - T::lit(8.0) * x * x * inv3;
    let g3 = -T::lit(24.0) * x * inv3 - T::lit(48.0) * x * x * x * inv3 * inv;
    Some([
        b,
        b * g1,
        b * (g1 * g1 + g2),
        b * (g1 * g1 * g1 + T::lit(3.0) * g1 * g2 + g3),
    ])
}

#[inline]
fn poly_derivs<T: Scalar>(coeffs: &[T], x: T) -> [T; 4] {
    // Horner on the polynomial and its first three derivatives at once
    let mut d = [T::zero(); 4];
    for &c in coeffs.iter().rev() {
        d[3] = d[3] * x + d[2];
        d[2] = d[2] * x + d[1];
        d[1] = d[1] * x + d[0];
        d[0] = d[0] * x + c;
    }
    // d[k] holds p^{(k)}/k!
    [d[0], d[1], T::lit(2.0) * d[2], T::lit(6.0) * d[3]]
}

/// Univariate kernel `c · p(x) · exp{-1/(1-x²)}` supported on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Kernel1D<T> {
    coeffs: Vec<T>,
    coeffs_f64: Vec<f64>,
    constant: T,
    constant_f64: f64,
    parity: Parity,
}

impl<T: Scalar> Kernel1D<T> {
    /// Kernel with an explicit constant. `coeffs` are in ascending order.
    pub fn with_constant(coeffs: &[f64], constant: f64, parity: Parity) -> Result<Self> {
        let wrong: Vec<usize> = coeffs
            .iter()
            .enumerate()
            .filter(|&(k, &c)| {
                c != 0.0
                    && match parity {
                        Parity::Even => k % 2 == 1,
                        Parity::Odd => k % 2 == 0,
                    }
            })
            .map(|(k, _)| k)
            .collect();
        if !wrong.is_empty() {
            return Err(EdgeError::Config(format!(
                "polynomial has terms of degree {wrong:?} incompatible with {parity:?} parity"
            )));
        }
        if !constant.is_finite() {
            return Err(EdgeError::Config("kernel constant is not finite".into()));
        }
        Ok(Kernel1D {
            coeffs: coeffs.iter().map(|&c| T::lit(c)).collect(),
            coeffs_f64: coeffs.to_vec(),
            constant: T::lit(constant),
            constant_f64: constant,
            parity,
        })
    }

    /// Kernel normalized so that `∫_{-1}^{1} K = 1` (even) or `∫_0^1 K = 1` (odd).
    pub fn normalized(coeffs: &[f64], parity: Parity) -> Result<Self> {
        let raw = Kernel1D::<f64>::with_constant(coeffs, 1.0, parity)?;
        let mass = match parity {
            Parity::Even => integrate(|x| raw.eval(x), -1.0, 1.0, QUAD_TOL * 1e-2)?,
            Parity::Odd => integrate(|x| raw.eval(x), 0.0, 1.0, QUAD_TOL * 1e-2)?,
        };
        if mass.abs() < 1e-300 {
            return Err(EdgeError::Config(
                "kernel has zero mass and cannot be normalized".into(),
            ));
        }
        Self::with_constant(coeffs, 1.0 / mass, parity)
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn normalizing_constant(&self) -> f64 {
        self.constant_f64
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs_f64
    }

    #[inline]
    pub fn eval(&self, x: T) -> T {
        match bump_derivs(x) {
            None => T::zero(),
            Some(b) => self.constant * poly_derivs(&self.coeffs, x)[0] * b[0],
        }
    }

    /// `(K(x), K'(x))`, sharing one exponential.
    #[inline]
    pub fn eval_with_deriv(&self, x: T) -> (T, T) {
        match bump_derivs(x) {
            None => (T::zero(), T::zero()),
            Some(b) => {
                let p = poly_derivs(&self.coeffs, x);
                (
                    self.constant * p[0] * b[0],
                    self.constant * (p[1] * b[0] + p[0] * b[1]),
                )
            }
        }
    }

    /// `K^{(order)}(x)` for `order` in `0..=3`.
    pub fn deriv(&self, x: T, order: usize) -> T {
        assert!(order <= 3, "only derivatives up to order 3 are available");
        let Some(b) = bump_derivs(x) else {
            return T::zero();
        };
        let p = poly_derivs(&self.coeffs, x);
        const BINOM: [[f64; 4]; 4] = [
            [1.0, 0.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 2.0, 1.0, 0.0],
            [1.0, 3.0, 3.0, 1.0],
        ];
        let mut acc = T::zero();
        for k in 0..=order {
            acc = acc + T::lit(BINOM[order][k]) * p[order - k] * b[k];
        }
        self.constant * acc
    }

    pub fn deriv1(&self, x: T) -> T {
        self.deriv(x, 1)
    }

    pub fn deriv2(&self, x: T) -> T {
        self.deriv(x, 2)
    }

    pub fn deriv3(&self, x: T) -> T {
        self.deriv(x, 3)
    }

    /// The same kernel evaluated in `f64`, used for fixed integrals.
    pub fn to_f64(&self) -> Kernel1D<f64> {
        Kernel1D {
            coeffs: self.coeffs_f64.clone(),
            coeffs_f64: self.coeffs_f64.clone(),
            constant: self.constant_f64,
            constant_f64: self.constant_f64,
            parity: self.parity,
        }
    }
}

/// Even kernel `K1` and odd kernel `K2` forming `K(z) = K1(z1) K2(z2)`.
#[derive(Debug, Clone)]
pub struct KernelPair<T> {
    pub k1: Kernel1D<T>,
    pub k2: Kernel1D<T>,
}

/// Kernels used throughout the simulation study:
/// `K1 ∝ exp{-1/(1-x²)}` and `K2 ∝ exp{-1/(1-x²)}(x³-x)`.
pub fn make_bump_kernels<T: Scalar>() -> Result<KernelPair<T>> {
    Ok(KernelPair {
        k1: Kernel1D::normalized(&[1.0], Parity::Even)?,
        k2: Kernel1D::normalized(&[0.0, -1.0, 0.0, 1.0], Parity::Odd)?,
    })
}

/// Angle in `[-π/2, π/2]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RotationAngle<T>(T);

impl<T: Scalar> RotationAngle<T> {
    pub fn new(psi: T) -> Result<Self> {
        let bound = T::FRAC_PI_2() * T::lit(1.0 + 1e-12);
        if !(psi.abs() <= bound) {
            return Err(EdgeError::Argument(format!(
                "rotation angle {psi} outside [-pi/2, pi/2]"
            )));
        }
        Ok(RotationAngle(psi.max(-T::FRAC_PI_2()).min(T::FRAC_PI_2())))
    }

    pub fn radians(self) -> T {
        self.0
    }
}

/// `R_ψ = [[cos ψ, -sin ψ], [sin ψ, cos ψ]]` for an arbitrary angle.
#[inline]
pub fn rotation<T: Scalar>(psi: T) -> [[T; 2]; 2] {
    let (s, c) = psi.sin_cos();
    [[c, -s], [s, c]]
}

pub fn rotation_matrix<T: Scalar>(psi: RotationAngle<T>) -> [[T; 2]; 2] {
    rotation(psi.0)
}

#[inline]
pub(crate) fn mat_vec<T: Scalar>(m: &[[T; 2]; 2], v: [T; 2]) -> [T; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

impl<T: Scalar> KernelPair<T> {
    pub fn bump() -> Result<Self> {
        make_bump_kernels()
    }

    /// Product kernel `K1(z1) K2(z2)`.
    #[inline]
    pub fn eval(&self, z: [T; 2]) -> T {
        if z[0].abs() >= T::one() || z[1].abs() >= T::one() {
            return T::zero();
        }
        self.k1.eval(z[0]) * self.k2.eval(z[1])
    }

    /// `∇K(z) = (K1'(z1) K2(z2), K1(z1) K2'(z2))`.
    #[inline]
    pub fn gradient(&self, z: [T; 2]) -> [T; 2] {
        let (a, da) = self.k1.eval_with_deriv(z[0]);
        let (b, db) = self.k2.eval_with_deriv(z[1]);
        [da * b, a * db]
    }

    /// `K`, `∂K/∂z1`, `∂K/∂z2` in one pass.
    #[inline]
    pub fn value_and_gradient(&self, z: [T; 2]) -> (T, [T; 2]) {
        let (a, da) = self.k1.eval_with_deriv(z[0]);
        if a == T::zero() && da == T::zero() {
            return (T::zero(), [T::zero(); 2]);
        }
        let (b, db) = self.k2.eval_with_deriv(z[1]);
        (a * b, [da * b, a * db])
    }

    /// Rotated, scaled kernel `K(h⁻¹ R_{-ψ} z) / h²`.
    pub fn rotated(&self, z: [T; 2], psi: RotationAngle<T>, h: T) -> Result<T> {
        if !(h > T::zero()) {
            return Err(EdgeError::Argument(format!("bandwidth must be positive, got {h}")));
        }
        let r = rotation(-psi.0);
        let u = mat_vec(&r, z);
        Ok(self.eval([u[0] / h, u[1] / h]) / (h * h))
    }

    pub fn to_f64(&self) -> KernelPair<f64> {
        KernelPair {
            k1: self.k1.to_f64(),
            k2: self.k2.to_f64(),
        }
    }
}

/// Free-function form of [`KernelPair::rotated`].
pub fn rotated_kernel<T: Scalar>(
    pair: &KernelPair<T>,
    z: [T; 2],
    psi: RotationAngle<T>,
    h: T,
) -> Result<T> {
    pair.rotated(z, psi, h)
}

/// Free-function form of [`KernelPair::gradient`].
pub fn kernel_gradient<T: Scalar>(pair: &KernelPair<T>, z: [T; 2]) -> [T; 2] {
    pair.gradient(z)
}

/// One numerical check of a kernel condition.
#[derive(Debug, Clone, Serialize)]
pub struct CheckItem {
    pub name: String,
    pub value: f64,
    pub target: String,
    pub pass: bool,
}

impl CheckItem {
    fn close(name: &str, value: f64, target: f64, tol: f64) -> Self {
        CheckItem {
            name: name.to_string(),
            value,
            target: format!("{target} ± {tol:e}"),
            pass: (value - target).abs() <= tol,
        }
    }

    fn flag(name: &str, value: f64, target: &str, pass: bool) -> Self {
        CheckItem {
            name: name.to_string(),
            value,
            target: target.to_string(),
            pass,
        }
    }
}

/// Numerical verification of the kernel conditions needed for the
/// location estimator (normalization, parity, boundary behaviour, positivity).
pub fn check_kernel_conditions<T: Scalar>(pair: &KernelPair<T>) -> Result<Vec<CheckItem>> {
    let p = pair.to_f64();
    let (k1, k2) = (&p.k1, &p.k2);
    let mut items = Vec::new();

    items.push(CheckItem::flag(
        "K1 parity",
        0.0,
        "even",
        k1.parity() == Parity::Even,
    ));
    items.push(CheckItem::flag(
        "K2 parity",
        0.0,
        "odd",
        k2.parity() == Parity::Odd,
    ));

    let mass1 = integrate(|x| k1.eval(x), -1.0, 1.0, QUAD_TOL)?;
    items.push(CheckItem::close("int_{-1}^{1} K1", mass1, 1.0, CHECK_TOL));
    let mass2 = integrate(|x| k2.eval(x), 0.0, 1.0, QUAD_TOL)?;
    items.push(CheckItem::close("int_0^1 K2", mass2, 1.0, CHECK_TOL));
    let mass2_neg = integrate(|x| k2.eval(x), -1.0, 0.0, QUAD_TOL)?;
    items.push(CheckItem::close("int_{-1}^0 K2", mass2_neg, -1.0, CHECK_TOL));

    for (name, k) in [("K1", k1), ("K2", k2)] {
        for order in 0..3 {
            for edge in [-1.0, 1.0] {
                let v = k.deriv(edge, order);
                items.push(CheckItem::close(
                    &format!("{name}^({order})({edge:+})"),
                    v,
                    0.0,
                    CHECK_TOL,
                ));
            }
        }
    }

    let sym1 = sample_interior()
        .map(|x| (k1.eval(x) - k1.eval(-x)).abs())
        .fold(0.0, f64::max);
    items.push(CheckItem::close("max |K1(x) - K1(-x)|", sym1, 0.0, CHECK_TOL));
    let sym2 = sample_interior()
        .map(|x| (k2.eval(x) + k2.eval(-x)).abs())
        .fold(0.0, f64::max);
    items.push(CheckItem::close("max |K2(x) + K2(-x)|", sym2, 0.0, CHECK_TOL));

    // positivity on a grid bounded away from the support edge, where the
    // bump underflows to zero in floating point
    let min_k1 = (1..200)
        .map(|k| -0.95 + 1.9 * k as f64 / 200.0)
        .map(|x| k1.eval(x))
        .fold(f64::INFINITY, f64::min);
    items.push(CheckItem::flag("min K1 on (-0.95, 0.95)", min_k1, "> 0", min_k1 > 0.0));

    items.push(CheckItem::close("K2(0)", k2.eval(0.0), 0.0, CHECK_TOL));
    let slope = k2.deriv1(0.0);
    items.push(CheckItem::flag("K2'(0)", slope, "> 0", slope > 0.0));
    Ok(items)
}

fn sample_interior() -> impl Iterator<Item = f64> {
    (0..=400).map(|k| -1.0 + 2.0 * k as f64 / 400.0)
}

/// Outcome of the kernel moment check `∫_0^1 x K2(x) dx = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub moment: f64,
    pub tolerance: f64,
    pub satisfied: bool,
    /// Whether the faster uniform rates for the slope and height estimators
    /// are covered by the theory for this kernel.
    pub slope_height_rates_available: bool,
}

pub fn check_moment_assumption<T: Scalar>(pair: &KernelPair<T>) -> Result<MomentReport> {
    let k2 = pair.k2.to_f64();
    let moment = integrate(|x| x * k2.eval(x), 0.0, 1.0, QUAD_TOL)?;
    let satisfied = moment.abs() < CHECK_TOL;
    Ok(MomentReport {
        moment,
        tolerance: CHECK_TOL,
        satisfied,
        slope_height_rates_available: satisfied,
    })
}

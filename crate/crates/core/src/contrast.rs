//! Empirical contrast process, its gradient, and the asymptotic limit.
//!
//! The contrast at `p = (x, y)` for angle `ψ` and bandwidth `h` is
//!
//! ```text
//! M(p; ψ, h) = (n1 n2)^-1 Σ Y[i1][i2] · K(h^-1 R_{-ψ}(p - x_{i1,i2})) / h²
//! ```
//!
//! Only pixels inside the bounding box of the rotated support are visited.

use crate::error::{EdgeError, Result};
use crate::image::{Curve, ImageGrid};
use crate::kernels::{KernelPair, QUAD_TOL};
use crate::quadrature::integrate;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastQuery<T> {
    pub x: T,
    pub y: T,
    pub psi: T,
    pub h: T,
}

impl<T: Scalar> ContrastQuery<T> {
    pub fn new(x: T, y: T, psi: T, h: T) -> Self {
        ContrastQuery { x, y, psi, h }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > T::zero() && self.h < T::lit(0.5)) {
            return Err(EdgeError::Argument(format!(
                "bandwidth {} outside (0, 1/2)",
                self.h
            )));
        }
        if !(self.psi.abs() <= T::FRAC_PI_2() * T::lit(1.0 + 1e-12)) {
            return Err(EdgeError::Argument(format!(
                "angle {} outside [-pi/2, pi/2]",
                self.psi
            )));
        }
        if !(self.x.is_finite() && self.y.is_finite()) {
            return Err(EdgeError::Argument("query point is not finite".into()));
        }
        Ok(())
    }
}

/// Which pixel weight a score sum uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// `⟨∇K(u), (sin ψ, cos ψ)⟩`: derivative in the vertical offset `w`.
    Location,
    /// `⟨∇K(u), R_{3π/2-ψ}(p - x_i)/h⟩ = ∂₁K(u)·u₂ - ∂₂K(u)·u₁`: derivative in `ψ`.
    Angle,
    /// `K(u)`: the contrast itself.
    Height,
}

/// Pixel indices and rescaled offsets `u = h^-1 R_{-ψ}(p - x_i)` of the
/// support box around a query point.
pub(crate) struct Window<T> {
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    n1: T,
    n2: T,
    x: T,
    y: T,
    cos: T,
    sin: T,
    inv_h: T,
}

fn index_range<T: Scalar>(center: T, reach: T, n: usize) -> std::ops::Range<usize> {
    // coordinates are (i+1)/n for 0-based i
    let nf = T::from_usize_lossy(n);
    let lo = ((center - reach) * nf - T::one()).ceil();
    let hi = ((center + reach) * nf - T::one()).floor();
    let lo = lo.max(T::zero()).to_usize().unwrap_or(0);
    let hi = if hi < T::zero() {
        return 0..0;
    } else {
        hi.to_usize().unwrap_or(usize::MAX).min(n.saturating_sub(1))
    };
    if lo > hi {
        0..0
    } else {
        lo..hi + 1
    }
}

impl<T: Scalar> Window<T> {
    pub(crate) fn new(dims: (usize, usize), q: &ContrastQuery<T>) -> Self {
        let reach = q.h * T::SQRT_2();
        let (sin, cos) = q.psi.sin_cos();
        Window {
            rows: index_range(q.x, reach, dims.0),
            cols: index_range(q.y, reach, dims.1),
            n1: T::from_usize_lossy(dims.0),
            n2: T::from_usize_lossy(dims.1),
            x: q.x,
            y: q.y,
            cos,
            sin,
            inv_h: T::one() / q.h,
        }
    }

    /// Calls `f(i1, i2, u)` for every pixel with `u` inside the open square.
    #[inline]
    pub(crate) fn for_each(&self, mut f: impl FnMut(usize, usize, [T; 2])) {
        let one = T::one();
        for i1 in self.rows.clone() {
            let d1 = self.x - T::from_usize_lossy(i1 + 1) / self.n1;
            let a1 = self.cos * d1;
            let a2 = -self.sin * d1;
            for i2 in self.cols.clone() {
                let d2 = self.y - T::from_usize_lossy(i2 + 1) / self.n2;
                let u1 = (a1 + self.sin * d2) * self.inv_h;
                if u1.abs() >= one {
                    continue;
                }
                let u2 = (a2 + self.cos * d2) * self.inv_h;
                if u2.abs() >= one {
                    continue;
                }
                f(i1, i2, [u1, u2]);
            }
        }
    }

    pub(crate) fn direction(&self) -> [T; 2] {
        [self.sin, self.cos]
    }
}

/// Per-pixel weight of the given score kind at offset `u`.
#[inline]
pub(crate) fn score_weight<T: Scalar>(
    pair: &KernelPair<T>,
    kind: ScoreKind,
    u: [T; 2],
    dir: [T; 2],
) -> T {
    match kind {
        ScoreKind::Height => pair.eval(u),
        ScoreKind::Location => {
            let g = pair.gradient(u);
            g[0] * dir[0] + g[1] * dir[1]
        }
        ScoreKind::Angle => {
            let g = pair.gradient(u);
            g[0] * u[1] - g[1] * u[0]
        }
    }
}

/// Flat pixel indices and weights of one score kind at a query point.
pub fn score_weights<T: Scalar>(
    dims: (usize, usize),
    pair: &KernelPair<T>,
    q: &ContrastQuery<T>,
    kind: ScoreKind,
) -> Vec<(usize, T)> {
    let win = Window::new(dims, q);
    let dir = win.direction();
    let mut out = Vec::new();
    win.for_each(|i1, i2, u| {
        let w = score_weight(pair, kind, u, dir);
        if w != T::zero() {
            out.push((i1 * dims.1 + i2, w));
        }
    });
    out
}

#[inline]
fn normalizer<T: Scalar>(grid: &ImageGrid<T>, h: T) -> T {
    let (n1, n2) = grid.dims();
    T::one() / (T::from_usize_lossy(n1) * T::from_usize_lossy(n2) * h * h)
}

/// Contrast value without precondition checks (hot path of the search).
#[inline]
pub(crate) fn contrast_unchecked<T: Scalar>(
    grid: &ImageGrid<T>,
    pair: &KernelPair<T>,
    q: &ContrastQuery<T>,
) -> T {
    let win = Window::new(grid.dims(), q);
    let mut acc = T::zero();
    win.for_each(|i1, i2, u| {
        let y = grid.get(i1, i2);
        if y != T::zero() {
            acc = acc + y * pair.eval(u);
        }
    });
    acc * normalizer(grid, q.h)
}

pub fn contrast<T: Scalar>(
    grid: &ImageGrid<T>,
    pair: &KernelPair<T>,
    q: &ContrastQuery<T>,
) -> Result<T> {
    q.validate()?;
    Ok(contrast_unchecked(grid, pair, q))
}

/// Gradient of the contrast in the rescaled offset `w` (with `y = y0 + h w`)
/// and in the angle `ψ`.
pub fn contrast_gradient<T: Scalar>(
    grid: &ImageGrid<T>,
    pair: &KernelPair<T>,
    q: &ContrastQuery<T>,
) -> Result<[T; 2]> {
    q.validate()?;
    Ok(contrast_gradient_unchecked(grid, pair, q))
}

pub(crate) fn contrast_gradient_unchecked<T: Scalar>(
    grid: &ImageGrid<T>,
    pair: &KernelPair<T>,
    q: &ContrastQuery<T>,
) -> [T; 2] {
    let win = Window::new(grid.dims(), q);
    let dir = win.direction();
    let mut dw = T::zero();
    let mut dpsi = T::zero();
    win.for_each(|i1, i2, u| {
        let y = grid.get(i1, i2);
        if y != T::zero() {
            dw = dw + y * score_weight(pair, ScoreKind::Location, u, dir);
            dpsi = dpsi + y * score_weight(pair, ScoreKind::Angle, u, dir);
        }
    });
    let norm = normalizer(grid, q.h);
    [dw * norm, dpsi * norm]
}

const CUMULATIVE_POINTS: usize = 4097;

/// Closed-form limit of the rescaled contrast for a single noiseless edge:
///
/// ```text
/// L(w, ψ; x) = -τ(x) ∫ K1(y) K̄2(a y + b) dy,  K̄2(y) = ∫_{-1}^y K2,
/// a = tan(ψ(x) - ψ),  b = w cos ψ(x) / cos(ψ(x) - ψ).
/// ```
///
/// `K̄2` is tabulated on 4097 points and interpolated by monotone cubic
/// Hermite splines.
#[derive(Debug, Clone)]
pub struct AsymptoticContrast {
    pair: KernelPair<f64>,
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

/// Inputs of the asymptotic contrast at one location.
#[derive(Debug, Clone)]
pub struct AsymptoticOracleQuery<'a> {
    pub w: f64,
    pub psi: f64,
    pub x: f64,
    pub curve: &'a Curve,
    pub height: f64,
}

impl AsymptoticContrast {
    pub fn new<T: Scalar>(pair: &KernelPair<T>) -> Result<Self> {
        let pair = pair.to_f64();
        let step = 2.0 / (CUMULATIVE_POINTS - 1) as f64;
        let knots: Vec<f64> = (0..CUMULATIVE_POINTS)
            .map(|k| -1.0 + k as f64 * step)
            .collect();
        let mut values = Vec::with_capacity(CUMULATIVE_POINTS);
        let mut acc = 0.0;
        values.push(0.0);
        for win in knots.windows(2) {
            acc += integrate(|t| pair.k2.eval(t), win[0], win[1], QUAD_TOL * 1e-3)?;
            values.push(acc);
        }
        let mut slopes: Vec<f64> = knots.iter().map(|&t| pair.k2.eval(t)).collect();
        // Fritsch–Carlson limiter keeps each interval monotone
        for k in 0..CUMULATIVE_POINTS - 1 {
            let secant = (values[k + 1] - values[k]) / step;
            if secant == 0.0 {
                slopes[k] = 0.0;
                slopes[k + 1] = 0.0;
                continue;
            }
            let a = slopes[k] / secant;
            let b = slopes[k + 1] / secant;
            if a < 0.0 {
                slopes[k] = 0.0;
            }
            if b < 0.0 {
                slopes[k + 1] = 0.0;
            }
            let r = a * a + b * b;
            if r > 9.0 {
                let t = 3.0 / r.sqrt();
                slopes[k] = t * a * secant;
                slopes[k + 1] = t * b * secant;
            }
        }
        Ok(AsymptoticContrast {
            pair,
            knots,
            values,
            slopes,
        })
    }

    /// `K̄2(y) = ∫_{-1}^{y} K2`.
    pub fn cumulative_k2(&self, y: f64) -> f64 {
        if y <= -1.0 {
            return 0.0;
        }
        if y >= 1.0 {
            return *self.values.last().unwrap();
        }
        let step = self.knots[1] - self.knots[0];
        let k = (((y + 1.0) / step) as usize).min(CUMULATIVE_POINTS - 2);
        let t = (y - self.knots[k]) / step;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.values[k]
            + h10 * step * self.slopes[k]
            + h01 * self.values[k + 1]
            + h11 * step * self.slopes[k + 1]
    }

    /// Limit contrast at rescaled offset `w` and angle `psi` for an edge with
    /// tangent angle `edge_angle` and height `height`.
    pub fn eval_at(&self, w: f64, psi: f64, edge_angle: f64, height: f64) -> Result<f64> {
        let diff = edge_angle - psi;
        let c = diff.cos();
        if c.abs() < 1e-12 {
            return Ok(0.0);
        }
        let a = diff.tan();
        let b = w * edge_angle.cos() / c;
        // every argument a y + b lies outside (-1, 1): K̄2 vanishes there
        if b.abs() >= 1.0 + a.abs() {
            return Ok(0.0);
        }
        let inner = integrate(
            |y| self.pair.k1.eval(y) * self.cumulative_k2(a * y + b),
            -1.0,
            1.0,
            QUAD_TOL,
        )?;
        // for |ψ(x) - ψ| > π/2 the rotated half-plane flips
        Ok(if c > 0.0 { -height * inner } else { height * inner })
    }

    pub fn eval(&self, q: &AsymptoticOracleQuery<'_>) -> Result<f64> {
        self.eval_at(q.w, q.psi, q.curve.angle(q.x), q.height)
    }
}

/// Free-function form of [`AsymptoticContrast::eval`].
pub fn asymptotic_contrast(oracle: &AsymptoticContrast, q: &AsymptoticOracleQuery<'_>) -> Result<f64> {
    oracle.eval(q)
}

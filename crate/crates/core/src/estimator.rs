//! Strip-wise joint maximization of the contrast in location and angle.
//!
//! For each `x` the contrast is searched exhaustively over a coarse
//! `(y, ψ)` grid, then refined by alternating golden-section searches in `y`
//! and `ψ` started from the best coarse cell. The height estimate is the
//! contrast value at the refined maximizer.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrast::{contrast_gradient_unchecked, contrast_unchecked, ContrastQuery};
use crate::error::{EdgeError, Result};
use crate::image::ImageGrid;
use crate::kernels::KernelPair;
use crate::scalar::Scalar;

/// Bandwidth for which `[-h, h]²` holds about `points_per_window` design
/// points: `h = √points / (2n)`, clamped into `[2/n, 1/4]`.
pub fn default_bandwidth<T: Scalar>(n: usize, points_per_window: usize) -> T {
    let nf = n.max(1) as f64;
    let h = (points_per_window as f64).sqrt() / (2.0 * nf);
    T::lit(h.clamp((2.0 / nf).min(0.25), 0.25))
}

/// Admissible bandwidth range `[ln(n)^η / √n, C n^{-1/3}]`.
pub fn bandwidth_range(n: usize, eta: f64, c: f64) -> (f64, f64) {
    let nf = n as f64;
    (nf.ln().powf(eta) / nf.sqrt(), c * nf.powf(-1.0 / 3.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandwidthCheck {
    pub h: f64,
    pub lower: f64,
    pub upper: f64,
    pub eta: f64,
    pub c: f64,
    pub pass: bool,
}

pub fn check_bandwidth(n: usize, h: f64, eta: f64, c: f64) -> BandwidthCheck {
    let (lower, upper) = bandwidth_range(n, eta, c);
    BandwidthCheck {
        h,
        lower,
        upper,
        eta,
        c,
        pass: lower <= h && h <= upper,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig<T> {
    pub h: T,
    /// Evaluation interval `I = [a, b]`.
    pub interval: (T, T),
    pub x_grid_size: usize,
    pub coarse_y_step: T,
    pub coarse_psi_step: T,
    /// Golden-section iterations per coordinate and sweep.
    pub refine_iters: usize,
}

const MAX_SWEEPS: usize = 25;
const NEWTON_STEPS: usize = 6;

impl<T: Scalar> EstimationConfig<T> {
    /// Defaults for an image with `n2` columns: `I = [max(2h, 0.04),
    /// min(1-2h, 0.96)]`, 64 strips, `Δy = 1/n2`, `Δψ = π/64`.
    pub fn new(h: T, n2: usize) -> Self {
        let two = T::lit(2.0);
        let lo = (two * h).max(T::lit(0.04));
        let hi = (T::one() - two * h).min(T::lit(0.96));
        EstimationConfig {
            h,
            interval: (lo, hi),
            x_grid_size: 64,
            coarse_y_step: T::one() / T::from_usize_lossy(n2.max(1)),
            coarse_psi_step: T::PI() / T::lit(64.0),
            refine_iters: 30,
        }
    }

    /// Defaults with the bandwidth from [`default_bandwidth`].
    pub fn for_grid(grid: &ImageGrid<T>, points_per_window: usize) -> Self {
        let (n1, n2) = grid.dims();
        let n = ((n1 * n2) as f64).sqrt().round() as usize;
        Self::new(default_bandwidth(n, points_per_window), n2)
    }

    pub fn with_interval(mut self, a: T, b: T) -> Self {
        self.interval = (a, b);
        self
    }

    pub fn with_x_grid_size(mut self, size: usize) -> Self {
        self.x_grid_size = size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.h;
        if !(h > T::zero()) {
            return Err(EdgeError::Config(format!("bandwidth must be positive, got {h}")));
        }
        if h >= T::lit(0.5) {
            return Err(EdgeError::Config(format!(
                "bandwidth {h} leaves an empty search region [h, 1-h]"
            )));
        }
        let (a, b) = self.interval;
        if !(a <= b && a >= h && b <= T::one() - h) {
            return Err(EdgeError::Config(format!(
                "interval [{a}, {b}] must lie inside [h, 1-h] = [{h}, {}]",
                T::one() - h
            )));
        }
        if self.x_grid_size == 0 {
            return Err(EdgeError::Config("x grid must have at least one point".into()));
        }
        if !(self.coarse_y_step > T::zero() && self.coarse_psi_step > T::zero()) {
            return Err(EdgeError::Config("coarse steps must be positive".into()));
        }
        Ok(())
    }

    /// Equispaced evaluation points covering `I`, endpoints included.
    pub fn x_grid(&self) -> Vec<T> {
        let (a, b) = self.interval;
        if self.x_grid_size == 1 {
            return vec![(a + b) / T::lit(2.0)];
        }
        let m = T::from_usize_lossy(self.x_grid_size - 1);
        (0..self.x_grid_size)
            .map(|k| a + (b - a) * T::from_usize_lossy(k) / m)
            .collect()
    }

    fn psi_grid(&self) -> Vec<T> {
        let half = T::FRAC_PI_2();
        let count = ((T::PI() / self.coarse_psi_step).floor().to_usize().unwrap_or(0)).max(1);
        let mut out: Vec<T> = (0..=count)
            .map(|k| -half + self.coarse_psi_step * T::from_usize_lossy(k))
            .collect();
        if let Some(last) = out.last_mut() {
            *last = last.min(half);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripEstimate<T> {
    pub phi: T,
    pub psi: T,
    pub tau: T,
    pub max_value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEstimate<T> {
    pub x_grid: Vec<T>,
    pub phi_hat: Vec<T>,
    pub psi_hat: Vec<T>,
    pub tau_hat: Vec<T>,
    pub contrast_at_max: Vec<T>,
    pub h: T,
    /// Image dimensions `(n1, n2)` the estimate was computed on.
    pub dims: (usize, usize),
}

impl<T: Scalar> EdgeEstimate<T> {
    pub fn len(&self) -> usize {
        self.x_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_grid.is_empty()
    }

    /// Effective side length `√(n1 n2)`.
    pub fn n_eff(&self) -> T {
        T::lit(((self.dims.0 * self.dims.1) as f64).sqrt())
    }

    pub fn from_strips(x_grid: Vec<T>, strips: &[StripEstimate<T>], h: T, dims: (usize, usize)) -> Self {
        EdgeEstimate {
            x_grid,
            phi_hat: strips.iter().map(|s| s.phi).collect(),
            psi_hat: strips.iter().map(|s| s.psi).collect(),
            tau_hat: strips.iter().map(|s| s.tau).collect(),
            contrast_at_max: strips.iter().map(|s| s.max_value).collect(),
            h,
            dims,
        }
    }

    pub fn strip(&self, k: usize) -> StripEstimate<T> {
        StripEstimate {
            phi: self.phi_hat[k],
            psi: self.psi_hat[k],
            tau: self.tau_hat[k],
            max_value: self.contrast_at_max[k],
        }
    }
}

/// Best angle and value for every coarse `y` of one strip.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastProfile<T> {
    pub y: Vec<T>,
    pub value: Vec<T>,
    pub psi: Vec<T>,
}

impl<T: Scalar> ContrastProfile<T> {
    /// Index of the largest value; ties go to the smallest `y` (then the
    /// smallest angle, already resolved per `y`).
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, &v) in self.value.iter().enumerate() {
            match best {
                Some(b) if v <= self.value[b] => {}
                _ => best = Some(k),
            }
        }
        best
    }
}

/// Coarse `y` values `lo, lo+Δ, …` not exceeding `hi`.
fn y_grid<T: Scalar>(lo: T, hi: T, step: T) -> Vec<T> {
    let count = ((hi - lo) / step + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
    (0..=count).map(|k| lo + step * T::from_usize_lossy(k)).collect()
}

/// Contrast over the coarse grid of one strip, restricted to `y ∈ [lo, hi]`.
///
/// When `Δy` is a whole number of pixel spacings the kernel weights are
/// shift-invariant in `y`, so they are tabulated once per angle and the
/// scan becomes a correlation along the columns.
pub fn contrast_profile<T: Scalar>(
    grid: &ImageGrid<T>,
    pair: &KernelPair<T>,
    x: T,
    cfg: &EstimationConfig<T>,
    (lo, hi): (T, T),
) -> ContrastProfile<T> {
    let ys = y_grid(lo, hi, cfg.coarse_y_step);
    let psis = cfg.psi_grid();
    let (n1, n2) = grid.dims();
    let mut value = vec![T::neg_infinity(); ys.len()];
    let mut best_psi = vec![T::zero(); ys.len()];
    if ys.is_empty() {
        return ContrastProfile { y: ys, value, psi: best_psi };
    }
    let n2f = T::from_usize_lossy(n2);
    let stride_f = cfg.coarse_y_step * n2f;
    let stride = stride_f.round();
    let shift_invariant = stride >= T::one() && (stride_f - stride).abs() < T::lit(1e-9);
    let h = cfg.h;
    let norm = T::one() / (T::from_usize_lossy(n1) * n2f * h * h);
    let mut scratch = vec![T::zero(); ys.len()];
    for &psi in &psis {
        if shift_invariant {
            correlate(grid, pair, x, ys[0], psi, h, stride.to_usize().unwrap(), &mut scratch);
            for v in scratch.iter_mut() {
                *v = *v * norm;
            }
        } else {
            for (k, &y) in ys.iter().enumerate() {
                scratch[k] = contrast_unchecked(grid, pair, &ContrastQuery::new(x, y, psi, h));
            }
        }
        for k in 0..ys.len() {
            if scratch[k] > value[k] {
                value[k] = scratch[k];
                best_psi[k] = psi;
            }
        }
    }
    ContrastProfile { y: ys, value, psi: best_psi }
}

/// Unnormalized sums `Σ Y K(u)` at `y0 + j·stride/n2`, `j = 0..out.len()`.
#[allow(clippy::too_many_arguments)]
fn correlate<T: Scalar>(
    grid: &ImageGrid<T>,
    pair: &KernelPair<T>,
    x: T,
    y0: T,
    psi: T,
    h: T,
    stride: usize,
    out: &mut [T],
) {
    let (n1, n2) = grid.dims();
    let n1f = T::from_usize_lossy(n1);
    let n2f = T::from_usize_lossy(n2);
    let reach = h * T::SQRT_2();
    let (sin, cos) = psi.sin_cos();
    let inv_h = T::one() / h;
    // virtual column offsets m with d2 = y0 - (m+1)/n2 inside the support box
    let m_lo = ((y0 - reach) * n2f - T::one()).ceil().to_i64().unwrap_or(0);
    let m_hi = ((y0 + reach) * n2f - T::one()).floor().to_i64().unwrap_or(-1);
    let i_lo = ((x - reach) * n1f - T::one()).ceil().max(T::zero()).to_usize().unwrap_or(0);
    let i_hi = ((x + reach) * n1f - T::one()).floor().to_i64().unwrap_or(-1);
    for v in out.iter_mut() {
        *v = T::zero();
    }
    if m_hi < m_lo || i_hi < 0 {
        return;
    }
    let i_hi = (i_hi as usize).min(n1 - 1);
    let mut weights: Vec<(i64, T)> = Vec::with_capacity((m_hi - m_lo + 1) as usize);
    for i1 in i_lo..=i_hi {
        let d1 = x - T::from_usize_lossy(i1 + 1) / n1f;
        weights.clear();
        for m in m_lo..=m_hi {
            let d2 = y0 - T::lit((m + 1) as f64) / n2f;
            let u = [(cos * d1 + sin * d2) * inv_h, (-sin * d1 + cos * d2) * inv_h];
            let w = pair.eval(u);
            if w != T::zero() {
                weights.push((m, w));
            }
        }
        if weights.is_empty() {
            continue;
        }
        let row = grid.row(i1);
        for (j, acc) in out.iter_mut().enumerate() {
            let base = (j * stride) as i64;
            let mut s = T::zero();
            for &(m, w) in &weights {
                let i2 = base + m;
                if i2 >= 0 && (i2 as usize) < n2 {
                    s = s + w * row[i2 as usize];
                }
            }
            *acc = *acc + s;
        }
    }
}

/// Maximizes `f` on `[a, b]` by golden-section search; returns the best of
/// the probes and the supplied incumbent.
fn golden_max<T: Scalar>(
    f: impl Fn(T) -> T,
    a: T,
    b: T,
    iters: usize,
    incumbent: (T, T),
) -> (T, T) {
    let g = T::lit(0.618_033_988_749_894_8);
    let mut best = incumbent;
    let (mut a, mut b) = (a, b);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc > best.1 {
            best = (c, fc);
        }
        if fd > best.1 {
            best = (d, fd);
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc > best.1 {
        best = (c, fc);
    }
    if fd > best.1 {
        best = (d, fd);
    }
    best
}

/// Alternating golden-section refinement from a coarse maximizer. The
/// contrast value never decreases along the way.
pub fn refine<T: Scalar>(
    grid: &ImageGrid<T>,
    pair: &KernelPair<T>,
    x: T,
    start: (T, T),
    cfg: &EstimationConfig<T>,
    (lo, hi): (T, T),
) -> StripEstimate<T> {
    let h = cfg.h;
    let eval = |y: T, psi: T| contrast_unchecked(grid, pair, &ContrastQuery::new(x, y, psi, h));
    let (mut y, mut psi) = start;
    let mut val = eval(y, psi);
    let half = T::FRAC_PI_2();
    for _ in 0..MAX_SWEEPS {
        let before = (y, psi, val);
        let (ny, nv) = golden_max(
            |t| eval(t, psi),
            (y - cfg.coarse_y_step).max(lo),
            (y + cfg.coarse_y_step).min(hi),
            cfg.refine_iters,
            (y, val),
        );
        y = ny;
        val = nv;
        let (np, nv) = golden_max(
            |t| eval(y, t),
            (psi - cfg.coarse_psi_step).max(-half),
            (psi + cfg.coarse_psi_step).min(half),
            cfg.refine_iters,
            (psi, val),
        );
        psi = np;
        val = nv;
        let moved = (y - before.0).abs() / h + (psi - before.1).abs();
        if moved < T::lit(1e-10) || val - before.2 <= val.abs() * T::epsilon() {
            break;
        }
    }
    // coordinate ascent crawls along tilted ridges; finish with Newton steps
    let grad = |y: T, psi: T| contrast_gradient_unchecked(grid, pair, &ContrastQuery::new(x, y, psi, h));
    let step = T::lit(1e-4);
    for _ in 0..NEWTON_STEPS {
        let g = grad(y, psi);
        if g[0].abs() + g[1].abs() < T::lit(1e-10) {
            break;
        }
        let (gw_p, gw_m) = (grad(y + h * step, psi), grad(y - h * step, psi));
        let (gp_p, gp_m) = (grad(y, psi + step), grad(y, psi - step));
        let two = T::lit(2.0) * step;
        let hww = (gw_p[0] - gw_m[0]) / two;
        let hpp = (gp_p[1] - gp_m[1]) / two;
        let hwp = ((gw_p[1] - gw_m[1]) + (gp_p[0] - gp_m[0])) / (two + two);
        let det = hww * hpp - hwp * hwp;
        if !(hww < T::zero() && det > T::zero()) {
            break;
        }
        let dw = -(hpp * g[0] - hwp * g[1]) / det;
        let dpsi = -(hww * g[1] - hwp * g[0]) / det;
        let (ny, npsi) = (y + h * dw, psi + dpsi);
        if ny < lo || ny > hi || npsi < -half || npsi > half {
            break;
        }
        let nv = eval(ny, npsi);
        if nv < val {
            break;
        }
        y = ny;
        psi = npsi;
        val = nv;
    }
    StripEstimate {
        phi: y,
        psi,
        tau: val,
        max_value: val,
    }
}

fn strip_in<T: Scalar>(
    grid: &ImageGrid<T>,
    pair: &KernelPair<T>,
    x: T,
    cfg: &EstimationConfig<T>,
    range: (T, T),
) -> Result<StripEstimate<T>> {
    let profile = contrast_profile(grid, pair, x, cfg, range);
    let k = profile
        .argmax()
        .ok_or_else(|| EdgeError::Config(format!("empty search region [{}, {}]", range.0, range.1)))?;
    let est = refine(grid, pair, x, (profile.y[k], profile.psi[k]), cfg, range);
    if est.tau <= T::zero() {
        warn!("non-positive height estimate {} at x = {x}", est.tau);
    }
    Ok(est)
}

/// Joint maximizer `(φ̂, ψ̂)` and height `τ̂` on the strip through `x`.
pub fn estimate_strip<T: Scalar>(
    grid: &ImageGrid<T>,
    pair: &KernelPair<T>,
    x: T,
    cfg: &EstimationConfig<T>,
) -> Result<StripEstimate<T>> {
    cfg.validate()?;
    strip_in(grid, pair, x, cfg, (cfg.h, T::one() - cfg.h))
}

/// As [`estimate_strip`] with `y` restricted to `[lo, hi] ∩ [h, 1-h]`.
pub fn estimate_strip_restricted<T: Scalar>(
    grid: &ImageGrid<T>,
    pair: &KernelPair<T>,
    x: T,
    cfg: &EstimationConfig<T>,
    lo: T,
    hi: T,
) -> Result<StripEstimate<T>> {
    cfg.validate()?;
    let range = (lo.max(cfg.h), hi.min(T::one() - cfg.h));
    strip_in(grid, pair, x, cfg, range)
}

/// Strip estimates on the whole x grid, computed in parallel.
pub fn estimate_curve<T: Scalar>(
    grid: &ImageGrid<T>,
    pair: &KernelPair<T>,
    cfg: &EstimationConfig<T>,
) -> Result<EdgeEstimate<T>> {
    cfg.validate()?;
    let xs = cfg.x_grid();
    let strips = xs
        .par_iter()
        .map(|&x| {
            strip_in(grid, pair, x, cfg, (cfg.h, T::one() - cfg.h)).map_err(|e| EdgeError::Strip {
                x: x.as_f64(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EdgeEstimate::from_strips(xs, &strips, cfg.h, grid.dims()))
}

//! Noise level estimate and plug-in variance components.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{EdgeError, Result};
use crate::estimator::EdgeEstimate;
use crate::image::ImageGrid;
use crate::kernels::{make_bump_kernels, KernelPair, QUAD_TOL};
use crate::quadrature::integrate;
use crate::scalar::Scalar;

/// Fixed kernel integrals entering the variance formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    /// `K2'(0)`.
    pub k2_slope0: f64,
    /// `∫∫ (K1'(z1) K2(z2))²`.
    pub grad1_sq: f64,
    /// `∫∫ (K1(z1) K2'(z2))²`.
    pub grad2_sq: f64,
    /// `∫ y² K1(y) dy`.
    pub k1_second_moment: f64,
    /// `∫∫ {K1(z1) K2'(z2) z1 - K1'(z1) K2(z2) z2}²`.
    pub vs_psi: f64,
    /// `∫∫ K²`.
    pub vs_tau: f64,
}

impl KernelConstants {
    /// All integrals are separable and computed by 1D adaptive quadrature.
    pub fn compute<T: Scalar>(pair: &KernelPair<T>) -> Result<Self> {
        let p = pair.to_f64();
        let (k1, k2) = (&p.k1, &p.k2);
        let q = |f: &dyn Fn(f64) -> f64| integrate(f, -1.0, 1.0, QUAD_TOL);
        let k1_sq = q(&|x| k1.eval(x).powi(2))?;
        let k2_sq = q(&|x| k2.eval(x).powi(2))?;
        let dk1_sq = q(&|x| k1.deriv1(x).powi(2))?;
        let dk2_sq = q(&|x| k2.deriv1(x).powi(2))?;
        let x2_k1_sq = q(&|x| (x * k1.eval(x)).powi(2))?;
        let x2_k2_sq = q(&|x| (x * k2.eval(x)).powi(2))?;
        let x_k1_dk1 = q(&|x| x * k1.eval(x) * k1.deriv1(x))?;
        let x_k2_dk2 = q(&|x| x * k2.eval(x) * k2.deriv1(x))?;
        Ok(KernelConstants {
            k2_slope0: k2.deriv1(0.0),
            grad1_sq: dk1_sq * k2_sq,
            grad2_sq: k1_sq * dk2_sq,
            k1_second_moment: q(&|x| x * x * k1.eval(x))?,
            vs_psi: x2_k1_sq * dk2_sq + dk1_sq * x2_k2_sq - 2.0 * x_k1_dk1 * x_k2_dk2,
            vs_tau: k1_sq * k2_sq,
        })
    }

    /// Constants of the default bump kernels, computed once per process.
    pub fn bump() -> Result<Self> {
        static CACHE: OnceLock<std::result::Result<KernelConstants, String>> = OnceLock::new();
        CACHE
            .get_or_init(|| {
                make_bump_kernels::<f64>()
                    .and_then(|p| KernelConstants::compute(&p))
                    .map_err(|e| e.to_string())
            })
            .clone()
            .map_err(EdgeError::Config)
    }

    /// `V^S_φ(ψ) = sin²ψ ∫(K1'K2)² + cos²ψ ∫(K1K2')²`.
    pub fn vs_phi(&self, psi: f64) -> f64 {
        let (s, c) = psi.sin_cos();
        s * s * self.grad1_sq + c * c * self.grad2_sq
    }

    /// `V^H_φ = τ cos²ψ K2'(0)`.
    pub fn vh_phi(&self, tau: f64, psi: f64) -> f64 {
        // cos(±π/2) is not exactly 0 in floating point
        let c = if (psi.abs() - std::f64::consts::FRAC_PI_2).abs() < 1e-12 {
            0.0
        } else {
            psi.cos()
        };
        tau * c * c * self.k2_slope0
    }

    /// `V^H_ψ = τ K2'(0) ∫y²K1`.
    pub fn vh_psi(&self, tau: f64) -> f64 {
        tau * self.k2_slope0 * self.k1_second_moment
    }

    /// Asymptotic standard deviation of `n·φ̂(x)` for known parameters.
    pub fn sd_phi(&self, sigma: f64, tau: f64, psi: f64) -> f64 {
        sigma * self.vs_phi(psi).sqrt() / self.vh_phi(tau, psi).abs()
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]` in unit coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Region {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Region { x0, y0, x1, y1 }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x <= self.x1 && self.y0 <= y && y <= self.y1
    }
}

const MIN_REGION_PIXELS: usize = 100;

/// `σ̂² = (2N)⁻¹ Σ (Y[i1+1][i2] - Y[i1][i2])²` over the `N` pairs of
/// neighbours along the first axis that lie in `region` (default: all).
pub fn estimate_sigma<T: Scalar>(grid: &ImageGrid<T>, region: Option<Region>) -> Result<T> {
    let (n1, n2) = grid.dims();
    let inside = |i1: usize, i2: usize| {
        region.is_none_or(|r| r.contains((i1 + 1) as f64 / n1 as f64, (i2 + 1) as f64 / n2 as f64))
    };
    let pixels = match region {
        None => n1 * n2,
        Some(_) => (0..n1)
            .flat_map(|i1| (0..n2).map(move |i2| (i1, i2)))
            .filter(|&(i1, i2)| inside(i1, i2))
            .count(),
    };
    if pixels < MIN_REGION_PIXELS {
        return Err(EdgeError::Argument(format!(
            "noise region holds {pixels} pixels, at least {MIN_REGION_PIXELS} needed"
        )));
    }
    let mut sum = 0.0f64;
    let mut pairs = 0usize;
    for i1 in 0..n1.saturating_sub(1) {
        for i2 in 0..n2 {
            if inside(i1, i2) && inside(i1 + 1, i2) {
                let d = (grid.get(i1 + 1, i2) - grid.get(i1, i2)).as_f64();
                sum += d * d;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(EdgeError::Argument("noise region contains no neighbour pairs".into()));
    }
    Ok(T::lit((sum / (2.0 * pairs as f64)).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents<T> {
    pub sigma_hat: T,
    pub vh_phi: Vec<T>,
    pub vs_phi: Vec<T>,
    pub vh_psi: Vec<T>,
    pub vs_psi: T,
    pub vs_tau: T,
    pub constants: KernelConstants,
}

/// Plug-in components at the estimated `(τ̂, ψ̂)`.
pub fn variance_components<T: Scalar>(
    est: &EdgeEstimate<T>,
    constants: &KernelConstants,
    sigma_hat: T,
) -> Result<VarianceComponents<T>> {
    if est.is_empty() {
        return Err(EdgeError::Argument("empty estimate".into()));
    }
    let mut vh_phi = Vec::with_capacity(est.len());
    let mut vs_phi = Vec::with_capacity(est.len());
    let mut vh_psi = Vec::with_capacity(est.len());
    for k in 0..est.len() {
        let (tau, psi) = (est.tau_hat[k].as_f64(), est.psi_hat[k].as_f64());
        let vh = constants.vh_phi(tau, psi);
        if vh == 0.0 {
            log::warn!("zero curvature V^H at x = {}", est.x_grid[k]);
        }
        vh_phi.push(T::lit(vh));
        vs_phi.push(T::lit(constants.vs_phi(psi)));
        vh_psi.push(T::lit(constants.vh_psi(tau)));
    }
    Ok(VarianceComponents {
        sigma_hat,
        vh_phi,
        vs_phi,
        vh_psi,
        vs_psi: T::lit(constants.vs_psi),
        vs_tau: T::lit(constants.vs_tau),
        constants: *constants,
    })
}

/// Plug-in asymptotic standard deviation `σ̂ √V^S_φ / |V^H_φ|` of `n·φ̂` at
/// grid index `k`.
pub fn asymptotic_sd_phi<T: Scalar>(
    components: &VarianceComponents<T>,
    x: T,
    k: usize,
) -> Result<T> {
    let vh = components.vh_phi[k];
    if vh == T::zero() {
        return Err(EdgeError::DegenerateCurvature { x: x.as_f64() });
    }
    Ok(components.sigma_hat * components.vs_phi[k].sqrt() / vh.abs())
}

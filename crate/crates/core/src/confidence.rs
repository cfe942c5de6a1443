//! Point-wise confidence intervals and multiplier-bootstrap uniform bands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::contrast::{score_weights, ContrastQuery, ScoreKind};
use crate::error::{EdgeError, Result};
use crate::estimator::EdgeEstimate;
use crate::image::Curve;
use crate::kernels::KernelPair;
use crate::scalar::Scalar;
use crate::variance::VarianceComponents;

/// Which curve a band is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Phi,
    Psi,
    Tau,
}

/// Band widening factor `1 + t_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TnPolicy {
    Fixed(f64),
    /// `t_n = 1/√(ln n)`.
    InvSqrtLog,
}

impl TnPolicy {
    pub fn resolve(&self, n: f64) -> f64 {
        match *self {
            TnPolicy::Fixed(v) => v,
            TnPolicy::InvSqrtLog => 1.0 / n.ln().sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    pub alpha: f64,
    pub n_bootstrap: usize,
    pub t_n: TnPolicy,
    pub target: Target,
    pub seed: u64,
}

pub const MIN_BOOTSTRAP: usize = 500;

impl Default for BandConfig {
    fn default() -> Self {
        BandConfig {
            alpha: 0.05,
            n_bootstrap: 4000,
            t_n: TnPolicy::InvSqrtLog,
            target: Target::Phi,
            seed: 0,
        }
    }
}

impl BandConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(EdgeError::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.n_bootstrap < MIN_BOOTSTRAP {
            return Err(EdgeError::Config(format!(
                "n_bootstrap {} below the minimum {MIN_BOOTSTRAP}",
                self.n_bootstrap
            )));
        }
        if let TnPolicy::Fixed(v) = self.t_n {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EdgeError::Config(format!("t_n must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Intervals or bands around one of the estimated curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub target: Target,
    pub x_grid: Vec<f64>,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub pointwise_lower: Vec<f64>,
    pub pointwise_upper: Vec<f64>,
    pub quantile_boot: f64,
    pub t_n_used: f64,
    pub alpha: f64,
}

impl BandResult {
    pub fn mean_width(&self) -> f64 {
        mean_width(&self.lower, &self.upper)
    }

    pub fn mean_pointwise_width(&self) -> f64 {
        mean_width(&self.pointwise_lower, &self.pointwise_upper)
    }

    /// Whether every uniform interval contains the point-wise one.
    pub fn is_nested(&self) -> bool {
        (0..self.center.len()).all(|k| {
            self.lower[k] <= self.pointwise_lower[k] && self.pointwise_upper[k] <= self.upper[k]
        })
    }

    /// Whether `truth(x)` lies in the uniform band at every grid point.
    pub fn covers(&self, truth: impl Fn(f64) -> f64) -> bool {
        self.x_grid
            .iter()
            .enumerate()
            .all(|(k, &x)| self.lower[k] <= truth(x) && truth(x) <= self.upper[k])
    }
}

fn mean_width(lo: &[f64], hi: &[f64]) -> f64 {
    if lo.is_empty() {
        return 0.0;
    }
    lo.iter().zip(hi).map(|(l, h)| h - l).sum::<f64>() / lo.len() as f64
}

/// Half-width of the interval at grid index `k` for a unit quantile:
/// `σ̂ √V^S / (n V^H)` for φ, `σ̂ √V^S_ψ / (n h V^H_ψ)` for ψ and
/// `σ̂ √V^S_τ / (n h)` for τ. Infinite when the curvature vanishes.
fn unit_half_width<T: Scalar>(
    est: &EdgeEstimate<T>,
    comps: &VarianceComponents<T>,
    target: Target,
    k: usize,
) -> f64 {
    let n = est.n_eff().as_f64();
    let h = est.h.as_f64();
    let sigma = comps.sigma_hat.as_f64();
    let (num, den) = match target {
        Target::Phi => (comps.vs_phi[k].as_f64().sqrt(), n * comps.vh_phi[k].as_f64().abs()),
        Target::Psi => (comps.vs_psi.as_f64().sqrt(), n * h * comps.vh_psi[k].as_f64().abs()),
        Target::Tau => (comps.vs_tau.as_f64().sqrt(), n * h),
    };
    if sigma == 0.0 {
        return 0.0;
    }
    if den == 0.0 {
        return f64::INFINITY;
    }
    sigma * num / den
}

fn centers<T: Scalar>(est: &EdgeEstimate<T>, target: Target) -> Vec<f64> {
    let v = match target {
        Target::Phi => &est.phi_hat,
        Target::Psi => &est.psi_hat,
        Target::Tau => &est.tau_hat,
    };
    v.iter().map(|t| t.as_f64()).collect()
}

/// Point-wise `1-α` intervals `center ± z_{1-α/2} · half_width`.
pub fn pointwise_intervals<T: Scalar>(
    est: &EdgeEstimate<T>,
    comps: &VarianceComponents<T>,
    target: Target,
    alpha: f64,
) -> (Vec<f64>, Vec<f64>) {
    let z = normal_quantile(1.0 - alpha / 2.0);
    let c = centers(est, target);
    (0..est.len())
        .map(|k| {
            let w = z * unit_half_width(est, comps, target, k);
            (c[k] - w, c[k] + w)
        })
        .unzip()
}

/// Point-wise intervals for the jump location.
pub fn pointwise_ci<T: Scalar>(
    est: &EdgeEstimate<T>,
    comps: &VarianceComponents<T>,
    alpha: f64,
) -> (Vec<f64>, Vec<f64>) {
    pointwise_intervals(est, comps, Target::Phi, alpha)
}

/// The normalized score process `x ↦ Σ ξ_i w_i(x) / (n h √V^S(x))` as a
/// sparse linear map from multipliers to the x grid. Only pixels touched
/// by some window get a multiplier slot.
#[derive(Debug, Clone)]
pub struct ScoreProcess {
    rows: Vec<Vec<(u32, f64)>>,
    slots: usize,
}

impl ScoreProcess {
    pub fn new<T: Scalar>(
        est: &EdgeEstimate<T>,
        comps: &VarianceComponents<T>,
        pair: &KernelPair<T>,
        target: Target,
    ) -> Self {
        let (n1, n2) = est.dims;
        let kind = match target {
            Target::Phi => ScoreKind::Location,
            Target::Psi => ScoreKind::Angle,
            Target::Tau => ScoreKind::Height,
        };
        let nh = est.n_eff().as_f64() * est.h.as_f64();
        let mut slot_of = vec![u32::MAX; n1 * n2];
        let mut slots = 0usize;
        let rows = (0..est.len())
            .map(|k| {
                let q = ContrastQuery::new(est.x_grid[k], est.phi_hat[k], est.psi_hat[k], est.h);
                let vs = match target {
                    Target::Phi => comps.vs_phi[k].as_f64(),
                    Target::Psi => comps.vs_psi.as_f64(),
                    Target::Tau => comps.vs_tau.as_f64(),
                };
                let scale = 1.0 / (nh * vs.sqrt());
                score_weights((n1, n2), pair, &q, kind)
                    .into_iter()
                    .map(|(idx, w)| {
                        if slot_of[idx] == u32::MAX {
                            slot_of[idx] = slots as u32;
                            slots += 1;
                        }
                        (slot_of[idx], w.as_f64() * scale)
                    })
                    .collect()
            })
            .collect();
        ScoreProcess { rows, slots }
    }

    /// Number of multipliers one replication needs.
    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `Z^ξ(x)` on the grid for given multipliers.
    pub fn evaluate(&self, xi: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(s, w)| w * xi[s as usize]).sum())
            .collect()
    }

    /// `sup_x |Z^ξ(x)|`.
    pub fn sup(&self, xi: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(s, w)| w * xi[s as usize]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// `Var Z^ξ(x)` implied by the weights, `Σ w²`.
    pub fn exact_variance(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(_, w)| w * w).sum())
            .collect()
    }

    /// Replication `b` of the bootstrap supremum; multipliers come from the
    /// ChaCha stream `b` of `seed`.
    pub fn replicate(&self, seed: u64, b: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b);
        let xi: Vec<f64> = (0..self.slots).map(|_| rng.sample(StandardNormal)).collect();
        self.sup(&xi)
    }

    /// Sorted bootstrap suprema.
    pub fn sup_samples(&self, n_bootstrap: usize, seed: u64) -> Vec<f64> {
        let mut samples: Vec<f64> = (0..n_bootstrap as u64)
            .into_par_iter()
            .map(|b| self.replicate(seed, b))
            .collect();
        samples.sort_by(|a, b| a.total_cmp(b));
        samples
    }
}

/// Empirical `level` quantile of sorted samples (order statistic
/// `⌈level · B⌉`).
pub fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (level * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapQuantile {
    pub quantile: f64,
    /// Sorted suprema.
    pub samples: Vec<f64>,
}

pub fn bootstrap_sup_quantile<T: Scalar>(
    est: &EdgeEstimate<T>,
    comps: &VarianceComponents<T>,
    pair: &KernelPair<T>,
    cfg: &BandConfig,
) -> Result<BootstrapQuantile> {
    cfg.validate()?;
    let process = ScoreProcess::new(est, comps, pair, cfg.target);
    let samples = process.sup_samples(cfg.n_bootstrap, cfg.seed);
    Ok(BootstrapQuantile {
        quantile: empirical_quantile(&samples, 1.0 - cfg.alpha),
        samples,
    })
}

/// Uniform band for a given bootstrap quantile.
pub fn band_from_quantile<T: Scalar>(
    est: &EdgeEstimate<T>,
    comps: &VarianceComponents<T>,
    target: Target,
    alpha: f64,
    quantile: f64,
    t_n: f64,
) -> BandResult {
    let c = centers(est, target);
    let (pointwise_lower, pointwise_upper) = pointwise_intervals(est, comps, target, alpha);
    let (lower, upper) = (0..est.len())
        .map(|k| {
            let w = (1.0 + t_n) * quantile * unit_half_width(est, comps, target, k);
            (c[k] - w, c[k] + w)
        })
        .unzip();
    BandResult {
        target,
        x_grid: est.x_grid.iter().map(|x| x.as_f64()).collect(),
        center: c,
        lower,
        upper,
        pointwise_lower,
        pointwise_upper,
        quantile_boot: quantile,
        t_n_used: t_n,
        alpha,
    }
}

pub fn uniform_band<T: Scalar>(
    est: &EdgeEstimate<T>,
    comps: &VarianceComponents<T>,
    pair: &KernelPair<T>,
    cfg: &BandConfig,
) -> Result<BandResult> {
    let boot = bootstrap_sup_quantile(est, comps, pair, cfg)?;
    let t_n = cfg.t_n.resolve(est.n_eff().as_f64());
    Ok(band_from_quantile(est, comps, cfg.target, cfg.alpha, boot.quantile, t_n))
}

/// `sup_x n |V^H(x) (φ̂(x) - φ(x))| / (σ̂ √V^S(x))`.
pub fn sup_statistic<T: Scalar>(
    est: &EdgeEstimate<T>,
    comps: &VarianceComponents<T>,
    truth: &Curve,
) -> f64 {
    let n = est.n_eff().as_f64();
    let sigma = comps.sigma_hat.as_f64();
    (0..est.len())
        .map(|k| {
            let x = est.x_grid[k].as_f64();
            let err = est.phi_hat[k].as_f64() - truth.value(x);
            n * (comps.vh_phi[k].as_f64() * err).abs() / (sigma * comps.vs_phi[k].as_f64().sqrt())
        })
        .fold(0.0, f64::max)
}

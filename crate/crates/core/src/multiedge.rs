//! Several separated jump curves: candidate detection with non-maximum
//! suppression, chaining into tracks, restricted re-estimation and
//! Bonferroni-corrected bands.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{uniform_band, BandConfig, BandResult};
use crate::error::{EdgeError, Result};
use crate::estimator::{
    contrast_profile, estimate_strip_restricted, EdgeEstimate, EstimationConfig, StripEstimate,
};
use crate::image::ImageGrid;
use crate::kernels::KernelPair;
use crate::scalar::Scalar;
use crate::variance::{estimate_sigma, KernelConstants, Region, VarianceComponents};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiEdgeConfig<T> {
    pub estimation: EstimationConfig<T>,
    pub max_curves: usize,
    /// Minimum distance `δ` between candidates of one strip, also the
    /// half-width of the restricted search around a track.
    pub separation: T,
    pub band: BandConfig,
    pub sigma_region: Option<Region>,
}

impl<T: Scalar> MultiEdgeConfig<T> {
    /// `δ = h`.
    pub fn new(estimation: EstimationConfig<T>, max_curves: usize, band: BandConfig) -> Self {
        MultiEdgeConfig {
            estimation,
            max_curves,
            separation: estimation.h,
            band,
            sigma_region: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.estimation.validate()?;
        if self.max_curves == 0 {
            return Err(EdgeError::Config("max_curves must be at least 1".into()));
        }
        if !(self.separation > T::zero()) {
            return Err(EdgeError::Config("separation must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate<T> {
    pub y: T,
    pub psi: T,
    pub value: T,
    /// Contrast below the noise floor.
    pub weak: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet<T> {
    pub x_grid: Vec<T>,
    pub strips: Vec<Vec<Candidate<T>>>,
    /// `3 σ̂ √V^S_τ / (n h)`.
    pub noise_floor: T,
}

/// Greedy non-maximum suppression over the local maxima of one profile.
fn suppress<T: Scalar>(
    y: &[T],
    value: &[T],
    psi: &[T],
    max: usize,
    delta: T,
    floor: T,
) -> Vec<Candidate<T>> {
    let m = value.len();
    let mut peaks: Vec<usize> = (0..m)
        .filter(|&k| {
            (k == 0 || value[k] >= value[k - 1]) && (k + 1 == m || value[k] >= value[k + 1])
        })
        .collect();
    peaks.sort_by(|&a, &b| value[b].partial_cmp(&value[a]).unwrap().then(a.cmp(&b)));
    let mut chosen: Vec<Candidate<T>> = Vec::new();
    for k in peaks {
        if chosen.len() == max {
            break;
        }
        if chosen.iter().all(|c| (c.y - y[k]).abs() >= delta) {
            chosen.push(Candidate {
                y: y[k],
                psi: psi[k],
                value: value[k],
                weak: value[k] < floor,
            });
        }
    }
    chosen
}

/// Up to `max_curves` well separated contrast maxima per strip.
pub fn detect_candidates<T: Scalar>(
    grid: &ImageGrid<T>,
    pair: &KernelPair<T>,
    cfg: &MultiEdgeConfig<T>,
) -> Result<CandidateSet<T>> {
    cfg.validate()?;
    let est = &cfg.estimation;
    let sigma = estimate_sigma(grid, cfg.sigma_region)?;
    let constants = KernelConstants::compute(pair)?;
    let (n1, n2) = grid.dims();
    let nh = T::lit(((n1 * n2) as f64).sqrt()) * est.h;
    let floor = T::lit(3.0 * constants.vs_tau.sqrt()) * sigma / nh;
    let xs = est.x_grid();
    let strips = xs
        .par_iter()
        .map(|&x| {
            let p = contrast_profile(grid, pair, x, est, (est.h, T::one() - est.h));
            suppress(&p.y, &p.value, &p.psi, cfg.max_curves, cfg.separation, floor)
        })
        .collect();
    Ok(CandidateSet {
        x_grid: xs,
        strips,
        noise_floor: floor,
    })
}

/// Chains strong candidates across strips into tracks; entry `j` of a track
/// is its `y` on strip `j`, if any.
pub fn chain_tracks<T: Scalar>(candidates: &CandidateSet<T>, tolerance: T) -> Vec<Vec<Option<T>>> {
    let m = candidates.strips.len();
    let mut tracks: Vec<Vec<Option<T>>> = Vec::new();
    let mut last: Vec<T> = Vec::new();
    for (j, strip) in candidates.strips.iter().enumerate() {
        let mut ys: Vec<T> = strip.iter().filter(|c| !c.weak).map(|c| c.y).collect();
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut links: Vec<(T, usize, usize)> = Vec::new();
        for (t, &ly) in last.iter().enumerate() {
            for (c, &y) in ys.iter().enumerate() {
                let d = (ly - y).abs();
                if d < tolerance {
                    links.push((d, t, c));
                }
            }
        }
        links.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; tracks.len()];
        let mut cand_used = vec![false; ys.len()];
        for (_, t, c) in links {
            if !track_used[t] && !cand_used[c] {
                track_used[t] = true;
                cand_used[c] = true;
                tracks[t][j] = Some(ys[c]);
                last[t] = ys[c];
            }
        }
        for (c, &y) in ys.iter().enumerate() {
            if !cand_used[c] {
                let mut track = vec![None; m];
                track[j] = Some(y);
                tracks.push(track);
                last.push(y);
            }
        }
    }
    tracks
}

fn nearest_present<T: Scalar>(track: &[Option<T>], j: usize) -> Option<T> {
    (0..track.len())
        .flat_map(|d| [j.checked_sub(d), Some(j + d)])
        .flatten()
        .find_map(|i| track.get(i).copied().flatten())
}

/// Re-estimates each track by maximizing within `±δ` of its candidates.
/// Tracks missing on more than a quarter of the strips are dropped. The
/// result is ordered by mean location.
pub fn estimate_multi<T: Scalar>(
    grid: &ImageGrid<T>,
    pair: &KernelPair<T>,
    candidates: &CandidateSet<T>,
    cfg: &MultiEdgeConfig<T>,
) -> Result<Vec<EdgeEstimate<T>>> {
    cfg.validate()?;
    let est = &cfg.estimation;
    let m = candidates.x_grid.len();
    let tracks = chain_tracks(candidates, T::lit(2.0) * est.h);
    let max_gaps = m / 4;
    let kept: Vec<Vec<Option<T>>> = tracks
        .into_iter()
        .filter(|t| {
            let gaps = t.iter().filter(|y| y.is_none()).count();
            if gaps > max_gaps {
                warn!("dropping track with {gaps} of {m} strips missing");
                false
            } else {
                true
            }
        })
        .collect();
    let delta = cfg.separation;
    let mut out = kept
        .par_iter()
        .map(|track| {
            let strips = (0..m)
                .map(|j| {
                    let x = candidates.x_grid[j];
                    let c = nearest_present(track, j).expect("kept tracks are non-empty");
                    estimate_strip_restricted(grid, pair, x, est, c - delta, c + delta).map_err(
                        |e| EdgeError::Strip {
                            x: x.as_f64(),
                            source: Box::new(e),
                        },
                    )
                })
                .collect::<Result<Vec<StripEstimate<T>>>>()?;
            Ok(EdgeEstimate::from_strips(candidates.x_grid.clone(), &strips, est.h, grid.dims()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |e: &EdgeEstimate<T>| e.phi_hat.iter().map(|v| v.as_f64()).sum::<f64>();
    out.sort_by(|a, b| mean(a).total_cmp(&mean(b)));
    Ok(out)
}

/// Uniform bands per track at level `α/J`.
pub fn bonferroni_bands<T: Scalar>(
    estimates: &[EdgeEstimate<T>],
    components: &[VarianceComponents<T>],
    pair: &KernelPair<T>,
    band: &BandConfig,
) -> Result<Vec<BandResult>> {
    if estimates.len() != components.len() {
        return Err(EdgeError::Argument(format!(
            "{} estimates but {} variance component sets",
            estimates.len(),
            components.len()
        )));
    }
    let j = estimates.len().max(1) as f64;
    estimates
        .iter()
        .zip(components)
        .enumerate()
        .map(|(k, (e, c))| {
            let cfg = BandConfig {
                alpha: band.alpha / j,
                seed: band.seed.wrapping_add(k as u64),
                ..*band
            };
            uniform_band(e, c, pair, &cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suppression_keeps_distance() {
        let y: Vec<f64> = (0..20).map(|k| k as f64 * 0.05).collect();
        let value = vec![
            0.0, 1.0, 0.9, 0.95, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.8, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0,
        ];
        let psi = vec![0.0; 20];
        let c = suppress(&y, &value, &psi, 3, 0.12, 0.1);
        let ys: Vec<f64> = c.iter().map(|c| c.y).collect();
        assert_eq!(ys, vec![0.05, 0.6000000000000001, 0.35000000000000003]);
        for a in &c {
            for b in &c {
                assert!(a.y == b.y || (a.y - b.y).abs() >= 0.12);
            }
        }
    }

    #[test]
    fn chaining_follows_nearest() {
        let cand = |y: f64| Candidate {
            y,
            psi: 0.0,
            value: 1.0,
            weak: false,
        };
        let set = CandidateSet {
            x_grid: vec![0.1, 0.2, 0.3],
            strips: vec![
                vec![cand(0.3), cand(0.7)],
                vec![cand(0.71), cand(0.31)],
                vec![cand(0.32)],
            ],
            noise_floor: 0.0,
        };
        let tracks = chain_tracks(&set, 0.1);
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0], vec![Some(0.3), Some(0.31), Some(0.32)]);
        assert_eq!(tracks[1], vec![Some(0.7), Some(0.71), None]);
        assert_eq!(nearest_present(&tracks[1], 2), Some(0.71));
    }
}

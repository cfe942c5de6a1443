//! Monte Carlo harness: coverage and width of intervals and bands, accuracy
//! of the standard deviation estimate, bias/sd ratios and quantile curves
//! for the `t_n` sensitivity analysis.
//!
//! Every replication draws its noise from its own ChaCha stream and all
//! aggregation happens in replication order, so a fixed seed reproduces the
//! report exactly.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{
    band_from_quantile, empirical_quantile, pointwise_intervals, sup_statistic, ScoreProcess,
    Target, TnPolicy, MIN_BOOTSTRAP,
};
use crate::error::{EdgeError, Result};
use crate::estimator::{default_bandwidth, estimate_curve, estimate_strip, EdgeEstimate, EstimationConfig};
use crate::image::{generate, scenarios, Curve, ImageGrid, SceneSpec};
use crate::kernels::KernelPair;
use crate::multiedge::{detect_candidates, estimate_multi, MultiEdgeConfig};
use crate::confidence::BandConfig;
use crate::variance::{estimate_sigma, variance_components, KernelConstants, VarianceComponents};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Linear edge `1/4 + x/2`, t₁₀ noise.
    Phi1,
    /// Parabolic edge `-(x-1/2)² + 3/5`, t₁₀ noise.
    Phi2,
    /// Two parallel parabolic edges, Gaussian noise.
    Multi,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Phi1 => "phi1",
            Scenario::Phi2 => "phi2",
            Scenario::Multi => "multi",
        }
    }

    /// Scene at noise level `level` (t scale `σ̃` for the single-edge
    /// scenes, Gaussian sd for the two-edge scene).
    pub fn scene(&self, level: f64, seed: u64) -> SceneSpec {
        match self {
            Scenario::Phi1 => scenarios::linear(level, seed),
            Scenario::Phi2 => scenarios::quadratic(level, seed),
            Scenario::Multi => scenarios::two_curves(level, seed),
        }
    }

    /// Jump curves from bottom to top.
    pub fn curves(&self) -> Vec<Curve> {
        match self {
            Scenario::Phi1 => vec![scenarios::linear_curve()],
            Scenario::Phi2 => vec![scenarios::quadratic_curve()],
            Scenario::Multi => {
                let lower = scenarios::two_curve_lower();
                let upper = lower.shifted(0.42);
                vec![lower, upper]
            }
        }
    }

    fn height(&self, x: f64) -> f64 {
        match self {
            Scenario::Multi => 1.5,
            _ => scenarios::jump_height(x),
        }
    }
}

/// Fixed `t_n` for one `(scenario, n, σ̃)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TnEntry {
    pub scenario: Scenario,
    pub n: usize,
    pub sigma_tilde: f64,
    pub t_n: f64,
}

/// Empirically tuned `t_n` for the single-edge scenes at
/// `n ∈ {128, 196, 256}` and `σ̃ ∈ {0.5, 0.9}`.
pub fn default_tn_table() -> Vec<TnEntry> {
    let rows: [(Scenario, f64, [f64; 3]); 4] = [
        (Scenario::Phi1, 0.5, [0.37, 0.34, 0.335]),
        (Scenario::Phi1, 0.9, [0.07, 0.001, 0.0]),
        (Scenario::Phi2, 0.5, [0.4, 0.37, 0.25]),
        (Scenario::Phi2, 0.9, [0.14, 0.1, 0.06]),
    ];
    rows.iter()
        .flat_map(|&(scenario, sigma_tilde, values)| {
            [128usize, 196, 256].into_iter().zip(values).map(move |(n, t_n)| TnEntry {
                scenario,
                n,
                sigma_tilde,
                t_n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub scenario: Scenario,
    pub n_list: Vec<usize>,
    pub sigma_tilde_list: Vec<f64>,
    pub alpha_list: Vec<f64>,
    pub reps: usize,
    pub n_bootstrap: usize,
    /// Bandwidth rule `h = √points / (2n)` unless `bandwidth` is set.
    pub points_per_window: usize,
    pub bandwidth: Option<f64>,
    pub t_n_table: Vec<TnEntry>,
    /// `t_n` for cells missing from the table.
    pub t_n_default: TnPolicy,
    /// Points at which the per-x accuracy tables are reported.
    pub table_x: Vec<f64>,
    /// Levels of the quantile curves of the sensitivity analysis.
    pub levels: Vec<f64>,
    pub seed: u64,
}

impl StudySpec {
    /// Desk-scale defaults: 100 replications, 2000 bootstrap draws,
    /// `n ∈ {64, 128}`, `σ̃ ∈ {0.5, 0.9}`, `α ∈ {0.05, 0.01}`.
    pub fn desk(scenario: Scenario) -> Self {
        let multi = scenario == Scenario::Multi;
        StudySpec {
            scenario,
            n_list: if multi { vec![64] } else { vec![64, 128] },
            sigma_tilde_list: if multi { vec![0.1] } else { vec![0.5, 0.9] },
            alpha_list: if multi { vec![0.05] } else { vec![0.05, 0.01] },
            reps: 100,
            n_bootstrap: 2000,
            points_per_window: 400,
            bandwidth: if multi { Some(0.15) } else { None },
            t_n_table: default_tn_table(),
            t_n_default: TnPolicy::InvSqrtLog,
            table_x: vec![0.040, 0.142, 0.347, 0.449, 0.653, 0.858],
            levels: (1..100).map(|k| k as f64 / 100.0).collect(),
            seed: 20_240_601,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(EdgeError::Config("reps must be at least 1".into()));
        }
        if let Some(&n) = self.n_list.iter().find(|&&n| n < 32) {
            return Err(EdgeError::Config(format!("grid side {n} below 32")));
        }
        if self.n_list.is_empty() || self.sigma_tilde_list.is_empty() || self.alpha_list.is_empty()
        {
            return Err(EdgeError::Config("empty study grid".into()));
        }
        if let Some(&a) = self.alpha_list.iter().find(|&&a| !(a > 0.0 && a < 1.0)) {
            return Err(EdgeError::Config(format!("alpha {a} outside (0, 1)")));
        }
        if self.n_bootstrap < MIN_BOOTSTRAP {
            return Err(EdgeError::Config(format!(
                "n_bootstrap {} below {MIN_BOOTSTRAP}",
                self.n_bootstrap
            )));
        }
        if let Some(&s) = self.sigma_tilde_list.iter().find(|&&s| !(s >= 0.0)) {
            return Err(EdgeError::Config(format!("noise level {s} is negative")));
        }
        Ok(())
    }

    pub fn bandwidth_for(&self, n: usize) -> f64 {
        self.bandwidth.unwrap_or_else(|| default_bandwidth(n, self.points_per_window))
    }

    pub fn t_n_for(&self, n: usize, sigma_tilde: f64) -> f64 {
        self.t_n_table
            .iter()
            .find(|e| e.scenario == self.scenario && e.n == n && (e.sigma_tilde - sigma_tilde).abs() < 1e-12)
            .map(|e| e.t_n)
            .unwrap_or_else(|| self.t_n_default.resolve(n as f64))
    }

    fn cells(&self) -> Vec<(usize, f64)> {
        self.n_list
            .iter()
            .flat_map(|&n| self.sigma_tilde_list.iter().map(move |&s| (n, s)))
            .collect()
    }

    fn noise_stream(cell: usize, rep: usize) -> u64 {
        ((cell as u64) << 32) | rep as u64
    }

    fn bootstrap_seed(&self, cell: usize, rep: usize) -> u64 {
        // splitmix64 finalizer of (seed, cell, rep)
        let mut z = self
            .seed
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(Self::noise_stream(cell, rep).wrapping_mul(0xBF58_476D_1CE4_E5B9));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Coverage and width for one nominal level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub alpha: f64,
    pub t_n: f64,
    /// Point-wise coverage averaged over x and replications.
    pub coverage_pointwise: f64,
    pub width_pointwise: f64,
    /// Fraction of replications whose uniform band contains the whole curve.
    pub coverage_uniform: f64,
    pub width_uniform: f64,
    /// Median over replications of the per-replication mean widths; robust
    /// to the few near-vertical angle estimates that dominate the mean.
    pub median_width_pointwise: f64,
    pub median_width_uniform: f64,
    /// Point-wise coverage per x.
    pub coverage_pointwise_by_x: Vec<f64>,
    /// Mean bootstrap quantile.
    pub mean_quantile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub x: f64,
    pub sd_true: f64,
    pub rmse_sd: f64,
    pub bias_sd_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileCurves {
    pub levels: Vec<f64>,
    /// Empirical quantiles of the supremum statistic against the true curve.
    pub empirical: Vec<f64>,
    /// Bootstrap quantiles averaged over replications.
    pub bootstrap: Vec<f64>,
}

impl QuantileCurves {
    /// Levels (linearly interpolated) where `bootstrap - empirical` changes
    /// sign.
    pub fn crossings(&self) -> Vec<f64> {
        let d: Vec<f64> = self
            .bootstrap
            .iter()
            .zip(&self.empirical)
            .map(|(b, e)| b - e)
            .collect();
        let mut out = Vec::new();
        for k in 1..d.len() {
            if d[k - 1] == 0.0 {
                out.push(self.levels[k - 1]);
            } else if d[k - 1] * d[k] < 0.0 {
                let t = d[k - 1] / (d[k - 1] - d[k]);
                out.push(self.levels[k - 1] + t * (self.levels[k] - self.levels[k - 1]));
            }
        }
        out
    }

    /// `bootstrap - empirical` at the level closest to `level`.
    pub fn gap_at(&self, level: f64) -> Option<f64> {
        let k = self
            .levels
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - level).abs().total_cmp(&(b.1 - level).abs()))?
            .0;
        Some(self.bootstrap[k] - self.empirical[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub scenario: Scenario,
    pub n: usize,
    pub sigma_tilde: f64,
    pub h: f64,
    pub reps_ok: usize,
    pub reps_failed: usize,
    /// More than 5% of the replications errored.
    pub failed: bool,
    pub x_grid: Vec<f64>,
    pub levels: Vec<LevelSummary>,
    /// RMSE of the plug-in sd of `n φ̂(x)` against its true value, per x.
    pub rmse_sd_by_x: Vec<f64>,
    /// `|mean φ̂ - φ| / sd(φ̂)` per x.
    pub bias_sd_ratio_by_x: Vec<f64>,
    pub table: Vec<TableRow>,
    pub mean_rmse_sd: f64,
    pub mean_bias_sd_ratio: f64,
    pub quantile_curves: QuantileCurves,
    /// Grid points with an unbounded interval (vanishing curvature), summed
    /// over replications; they are left out of the width averages.
    pub unbounded_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub spec: StudySpec,
    pub cells: Vec<CellReport>,
    /// Wall-clock seconds; not part of the reproducible content.
    #[serde(default)]
    pub runtime_seconds: f64,
}

impl StudyReport {
    pub fn cell(&self, n: usize, sigma_tilde: f64) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.n == n && (c.sigma_tilde - sigma_tilde).abs() < 1e-12)
    }

    /// Same content ignoring the runtime.
    pub fn same_results(&self, other: &StudyReport) -> bool {
        self.spec == other.spec && self.cells == other.cells
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| EdgeError::Config(format!("serializing report: {e}")))?;
        std::fs::write(path, text).map_err(|source| EdgeError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// One row per cell, level and x.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "scenario,n,sigma_tilde,h,alpha,t_n,x,pw_coverage_x,rmse_sd,bias_sd_ratio,\
             coverage_pointwise,width_pointwise,coverage_uniform,width_uniform"
        )?;
        for c in &self.cells {
            for l in &c.levels {
                for (k, x) in c.x_grid.iter().enumerate() {
                    let get = |v: &Vec<f64>| v.get(k).copied().unwrap_or(f64::NAN);
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                        c.scenario.name(),
                        c.n,
                        c.sigma_tilde,
                        fmt9(c.h),
                        l.alpha,
                        l.t_n,
                        fmt9(*x),
                        fmt9(get(&l.coverage_pointwise_by_x)),
                        fmt9(get(&c.rmse_sd_by_x)),
                        fmt9(get(&c.bias_sd_ratio_by_x)),
                        fmt9(l.coverage_pointwise),
                        fmt9(l.width_pointwise),
                        fmt9(l.coverage_uniform),
                        fmt9(l.width_uniform),
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// `v` with 9 significant digits.
pub fn fmt9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.8e}");
    s.parse::<f64>().map(|r| format!("{r}")).unwrap_or(s)
}

/// Result of one replication.
#[derive(Debug, Clone)]
struct Replication {
    phi_hat: Vec<f64>,
    sd_hat: Vec<f64>,
    table_phi: Vec<f64>,
    table_sd: Vec<f64>,
    /// Per level: point-wise hits per x, mean bounded width, uniform cover,
    /// mean bounded uniform width, quantile.
    pw_hits: Vec<Vec<bool>>,
    pw_width: Vec<f64>,
    unif_cover: Vec<bool>,
    unif_width: Vec<f64>,
    quantile: Vec<f64>,
    unbounded: usize,
    sup_stat: f64,
    boot_curve: Vec<f64>,
}

fn mean_finite(values: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = values
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

struct CellContext<'a> {
    spec: &'a StudySpec,
    pair: &'a KernelPair<f64>,
    constants: &'a KernelConstants,
    cell: usize,
    n: usize,
    level: f64,
    h: f64,
    t_n: f64,
    bootstrap: bool,
}

impl CellContext<'_> {
    fn image(&self, rep: usize) -> Result<ImageGrid<f64>> {
        let scene = self.spec.scenario.scene(self.level, self.spec.seed);
        let noise = scene.noise.with_stream(StudySpec::noise_stream(self.cell, rep));
        generate(&scene.with_noise(noise), self.n)
    }

    fn estimates(&self, grid: &ImageGrid<f64>) -> Result<Vec<EdgeEstimate<f64>>> {
        let cfg = EstimationConfig::new(self.h, self.n);
        match self.spec.scenario {
            Scenario::Multi => {
                let band = BandConfig::default();
                let mcfg = MultiEdgeConfig::new(cfg, 2, band);
                let c = detect_candidates(grid, self.pair, &mcfg)?;
                estimate_multi(grid, self.pair, &c, &mcfg)
            }
            _ => Ok(vec![estimate_curve(grid, self.pair, &cfg)?]),
        }
    }

    fn replicate(&self, rep: usize) -> Result<Replication> {
        let grid = self.image(rep)?;
        let estimates = self.estimates(&grid)?;
        let sigma = estimate_sigma(&grid, None)?;
        let comps: Vec<VarianceComponents<f64>> = estimates
            .iter()
            .map(|e| variance_components(e, self.constants, sigma))
            .collect::<Result<_>>()?;
        let curves = self.spec.scenario.curves();
        let matched = estimates.len() == curves.len();
        let n_alpha = self.spec.alpha_list.len();
        let j = estimates.len().max(1) as f64;
        let seed = self.spec.bootstrap_seed(self.cell, rep);

        let mut out = Replication {
            phi_hat: estimates[0].phi_hat.clone(),
            sd_hat: (0..estimates[0].len())
                .map(|k| {
                    let vh = comps[0].vh_phi[k].abs();
                    sigma * comps[0].vs_phi[k].sqrt() / vh
                })
                .collect(),
            table_phi: Vec::new(),
            table_sd: Vec::new(),
            pw_hits: vec![Vec::new(); n_alpha],
            pw_width: vec![0.0; n_alpha],
            unif_cover: vec![matched; n_alpha],
            unif_width: vec![0.0; n_alpha],
            quantile: vec![f64::NAN; n_alpha],
            unbounded: 0,
            sup_stat: f64::NAN,
            boot_curve: Vec::new(),
        };

        if self.spec.scenario != Scenario::Multi {
            let cfg = EstimationConfig::new(self.h, self.n);
            for &x in &self.spec.table_x {
                let s = estimate_strip(&grid, self.pair, x, &cfg)?;
                out.table_phi.push(s.phi);
                out.table_sd.push(self.constants.sd_phi(sigma, s.tau, s.psi));
            }
            out.sup_stat = sup_statistic(&estimates[0], &comps[0], &curves[0]);
        }

        for (t, (est, comp)) in estimates.iter().zip(&comps).enumerate() {
            let truth = |x: f64| curves.get(t).map(|c| c.value(x)).unwrap_or(f64::NAN);
            out.unbounded += comp.vh_phi.iter().filter(|v| **v == 0.0).count();
            let samples = if self.bootstrap {
                ScoreProcess::new(est, comp, self.pair, Target::Phi)
                    .sup_samples(self.spec.n_bootstrap, seed.wrapping_add(t as u64))
            } else {
                Vec::new()
            };
            if t == 0 && self.bootstrap {
                out.boot_curve = self
                    .spec
                    .levels
                    .iter()
                    .map(|&l| empirical_quantile(&samples, l))
                    .collect();
            }
            for (a, &alpha) in self.spec.alpha_list.iter().enumerate() {
                let (lo, hi) = pointwise_intervals(est, comp, Target::Phi, alpha);
                for (k, &x) in est.x_grid.iter().enumerate() {
                    let v = truth(x);
                    out.pw_hits[a].push(lo[k] <= v && v <= hi[k]);
                }
                out.pw_width[a] += mean_finite(lo.iter().zip(&hi).map(|(l, h)| h - l)) / j;
                if self.bootstrap {
                    let q = empirical_quantile(&samples, 1.0 - alpha / j);
                    let band = band_from_quantile(est, comp, Target::Phi, alpha / j, q, self.t_n);
                    out.unif_cover[a] &= band.covers(truth);
                    out.unif_width[a] += mean_finite(band.lower.iter().zip(&band.upper).map(|(l, h)| h - l)) / j;
                    if t == 0 {
                        out.quantile[a] = q;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn aggregate(ctx: &CellContext<'_>, x_grid: Vec<f64>, reps: Vec<Result<Replication>>) -> CellReport {
    let spec = ctx.spec;
    let total = reps.len();
    let ok: Vec<Replication> = reps
        .into_iter()
        .filter_map(|r| r.map_err(|e| log::warn!("replication failed: {e}")).ok())
        .collect();
    let failed = total - ok.len();
    let curve = ctx.spec.scenario.curves().remove(0);
    let m = x_grid.len();
    let sd_true_at = |x: f64| {
        let sigma = ctx.spec.scenario.scene(ctx.level, 0).noise.sd();
        ctx.constants.sd_phi(sigma, ctx.spec.scenario.height(x), curve.angle(x))
    };

    let levels = spec
        .alpha_list
        .iter()
        .enumerate()
        .map(|(a, &alpha)| {
            let by_x: Vec<f64> = (0..m)
                .map(|k| {
                    let hits: Vec<bool> = ok
                        .iter()
                        .flat_map(|r| r.pw_hits[a].iter().skip(k).step_by(m).copied())
                        .collect();
                    hits.iter().filter(|h| **h).count() as f64 / hits.len().max(1) as f64
                })
                .collect();
            LevelSummary {
                alpha,
                t_n: ctx.t_n,
                coverage_pointwise: mean(&by_x),
                width_pointwise: mean(&ok.iter().map(|r| r.pw_width[a]).collect::<Vec<_>>()),
                coverage_uniform: if ctx.bootstrap {
                    ok.iter().filter(|r| r.unif_cover[a]).count() as f64 / ok.len().max(1) as f64
                } else {
                    f64::NAN
                },
                width_uniform: mean(&ok.iter().map(|r| r.unif_width[a]).collect::<Vec<_>>()),
                median_width_pointwise: median(ok.iter().map(|r| r.pw_width[a]).collect()),
                median_width_uniform: median(ok.iter().map(|r| r.unif_width[a]).collect()),
                coverage_pointwise_by_x: by_x,
                mean_quantile: mean(&ok.iter().map(|r| r.quantile[a]).collect::<Vec<_>>()),
            }
        })
        .collect();

    let single = spec.scenario != Scenario::Multi;
    let (rmse_sd_by_x, bias_sd_ratio_by_x) = if single && !ok.is_empty() {
        let rmse = (0..m)
            .map(|k| {
                let t = sd_true_at(x_grid[k]);
                let se: Vec<f64> = ok.iter().map(|r| (r.sd_hat[k] - t).powi(2)).collect();
                mean(&se).sqrt()
            })
            .collect();
        let ratio = (0..m)
            .map(|k| {
                let v: Vec<f64> = ok.iter().map(|r| r.phi_hat[k]).collect();
                (mean(&v) - curve.value(x_grid[k])).abs() / sample_sd(&v)
            })
            .collect();
        (rmse, ratio)
    } else {
        (Vec::new(), Vec::new())
    };
    let table = if single && !ok.is_empty() {
        spec.table_x
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let sd_true = sd_true_at(x);
                let se: Vec<f64> = ok.iter().map(|r| (r.table_sd[i] - sd_true).powi(2)).collect();
                let v: Vec<f64> = ok.iter().map(|r| r.table_phi[i]).collect();
                TableRow {
                    x,
                    sd_true,
                    rmse_sd: mean(&se).sqrt(),
                    bias_sd_ratio: (mean(&v) - curve.value(x)).abs() / sample_sd(&v),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let quantile_curves = if single && ctx.bootstrap && !ok.is_empty() {
        let mut sups: Vec<f64> = ok.iter().map(|r| r.sup_stat).collect();
        sups.sort_by(|a, b| a.total_cmp(b));
        QuantileCurves {
            levels: spec.levels.clone(),
            empirical: spec.levels.iter().map(|&l| empirical_quantile(&sups, l)).collect(),
            bootstrap: (0..spec.levels.len())
                .map(|i| mean(&ok.iter().map(|r| r.boot_curve[i]).collect::<Vec<_>>()))
                .collect(),
        }
    } else {
        QuantileCurves {
            levels: Vec::new(),
            empirical: Vec::new(),
            bootstrap: Vec::new(),
        }
    };

    CellReport {
        scenario: spec.scenario,
        n: ctx.n,
        sigma_tilde: ctx.level,
        h: ctx.h,
        reps_ok: ok.len(),
        reps_failed: failed,
        failed: failed * 20 > total,
        x_grid,
        levels,
        mean_rmse_sd: mean_finite(rmse_sd_by_x.iter().copied()),
        mean_bias_sd_ratio: mean_finite(bias_sd_ratio_by_x.iter().copied()),
        rmse_sd_by_x,
        bias_sd_ratio_by_x,
        table,
        quantile_curves,
        unbounded_points: ok.iter().map(|r| r.unbounded).sum(),
    }
}

fn run(spec: &StudySpec, bootstrap: bool) -> Result<StudyReport> {
    spec.validate()?;
    let start = Instant::now();
    let pair = KernelPair::<f64>::bump()?;
    let constants = KernelConstants::compute(&pair)?;
    let mut cells = Vec::new();
    for (cell, (n, level)) in spec.cells().into_iter().enumerate() {
        let h = spec.bandwidth_for(n);
        let ctx = CellContext {
            spec,
            pair: &pair,
            constants: &constants,
            cell,
            n,
            level,
            h,
            t_n: spec.t_n_for(n, level),
            bootstrap,
        };
        let cfg = EstimationConfig::new(h, n);
        cfg.validate()?;
        log::info!("cell {} n={n} level={level} h={h:.4}", spec.scenario.name());
        let reps: Vec<Result<Replication>> =
            (0..spec.reps).into_par_iter().map(|r| ctx.replicate(r)).collect();
        cells.push(aggregate(&ctx, cfg.x_grid(), reps));
    }
    Ok(StudyReport {
        spec: spec.clone(),
        cells,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Full study: coverage, widths, accuracy tables and quantile curves.
pub fn run_study(spec: &StudySpec) -> Result<StudyReport> {
    run(spec, true)
}

/// RMSE of the plug-in sd at `table_x`, per cell (no bootstrap).
pub fn rmse_sd_study(spec: &StudySpec) -> Result<Vec<(usize, f64, Vec<TableRow>, f64)>> {
    let report = run(spec, false)?;
    Ok(report
        .cells
        .into_iter()
        .map(|c| (c.n, c.sigma_tilde, c.table, c.mean_rmse_sd))
        .collect())
}

/// `|mean φ̂ - φ| / sd(φ̂)` per x of the evaluation grid, per cell.
pub fn bias_ratio_study(spec: &StudySpec) -> Result<Vec<(usize, f64, Vec<f64>, f64)>> {
    let report = run(spec, false)?;
    Ok(report
        .cells
        .into_iter()
        .map(|c| (c.n, c.sigma_tilde, c.bias_sd_ratio_by_x, c.mean_bias_sd_ratio))
        .collect())
}

/// Empirical vs bootstrap quantile curves per cell.
pub fn tn_sensitivity(spec: &StudySpec) -> Result<Vec<(usize, f64, QuantileCurves)>> {
    if spec.reps == 0 {
        return Ok(spec
            .cells()
            .into_iter()
            .map(|(n, s)| {
                (
                    n,
                    s,
                    QuantileCurves {
                        levels: Vec::new(),
                        empirical: Vec::new(),
                        bootstrap: Vec::new(),
                    },
                )
            })
            .collect());
    }
    let report = run(spec, true)?;
    Ok(report
        .cells
        .into_iter()
        .map(|c| (c.n, c.sigma_tilde, c.quantile_curves))
        .collect())
}

/// Quantile curves as CSV: `n,sigma_tilde,level,empirical,bootstrap`.
pub fn write_quantile_curves(
    curves: &[(usize, f64, QuantileCurves)],
    mut out: impl Write,
) -> std::io::Result<()> {
    writeln!(out, "n,sigma_tilde,level,empirical,bootstrap")?;
    for (n, s, c) in curves {
        for k in 0..c.levels.len() {
            writeln!(
                out,
                "{n},{s},{},{},{}",
                c.levels[k],
                fmt9(c.empirical[k]),
                fmt9(c.bootstrap[k])
            )?;
        }
    }
    Ok(())
}

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::Serialize;

use super::ImageGrid;
use crate::error::{EdgeError, Result};
use crate::scalar::Scalar;

type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A curve `x ↦ φ(x)` together with its derivative.
#[derive(Clone)]
pub struct Curve {
    value: Fn1,
    deriv: Fn1,
}

impl Curve {
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        deriv: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Curve {
            value: Arc::new(value),
            deriv: Arc::new(deriv),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        (self.deriv)(x)
    }

    /// Tangent angle `arctan φ'(x)`.
    pub fn angle(&self, x: f64) -> f64 {
        self.deriv(x).atan()
    }

    /// The curve shifted by a constant.
    pub fn shifted(&self, offset: f64) -> Curve {
        let value = self.value.clone();
        Curve {
            value: Arc::new(move |x| value(x) + offset),
            deriv: self.deriv.clone(),
        }
    }
}

impl fmt::Debug for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Curve(φ(0.5) = {})", self.value(0.5))
    }
}

/// One jump of height `τ(x)` below the curve `y = φ(x)`.
#[derive(Clone)]
pub struct JumpCurve {
    pub location: Curve,
    pub height: Fn1,
}

impl JumpCurve {
    pub fn new(location: Curve, height: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        JumpCurve {
            location,
            height: Arc::new(height),
        }
    }

    pub fn height(&self, x: f64) -> f64 {
        (self.height)(x)
    }
}

impl fmt::Debug for JumpCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "JumpCurve({:?}, τ(0.5) = {})", self.location, self.height(0.5))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    StudentT { df: u32 },
}

/// I.i.d. additive noise `scale · ε` with `ε` standard normal or Student t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub scale: f64,
    pub seed: u64,
    /// ChaCha stream, one per Monte Carlo replication.
    pub stream: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            family: NoiseFamily::Gaussian,
            scale: 0.0,
            seed: 0,
            stream: 0,
        }
    }

    pub fn gaussian(sd: f64, seed: u64) -> Self {
        NoiseSpec {
            family: NoiseFamily::Gaussian,
            scale: sd,
            seed,
            stream: 0,
        }
    }

    pub fn student_t(scale: f64, df: u32, seed: u64) -> Self {
        NoiseSpec {
            family: NoiseFamily::StudentT { df },
            scale,
            seed,
            stream: 0,
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    /// Standard deviation of one noise draw.
    pub fn sd(&self) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => self.scale,
            NoiseFamily::StudentT { df } if df > 2 => {
                self.scale * (df as f64 / (df as f64 - 2.0)).sqrt()
            }
            NoiseFamily::StudentT { .. } => f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(EdgeError::Validation(format!(
                "noise scale must be finite and non-negative, got {}",
                self.scale
            )));
        }
        if let NoiseFamily::StudentT { df: 0 } = self.family {
            return Err(EdgeError::Validation("Student t needs df >= 1".into()));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// `count` draws in order from this spec's stream.
    pub fn sample(&self, count: usize) -> Result<Vec<f64>> {
        self.validate()?;
        if self.scale == 0.0 {
            return Ok(vec![0.0; count]);
        }
        let mut rng = self.rng();
        Ok(match self.family {
            NoiseFamily::Gaussian => (0..count)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    self.scale * e
                })
                .collect(),
            NoiseFamily::StudentT { df } => {
                let dist = StudentT::new(df as f64)
                    .map_err(|e| EdgeError::Validation(format!("student t: {e}")))?;
                (0..count).map(|_| self.scale * dist.sample(&mut rng)).collect()
            }
        })
    }
}

/// Image model: smooth background plus one or more downward jumps.
#[derive(Clone)]
pub struct SceneSpec {
    pub smooth: Fn2,
    pub curves: Vec<JumpCurve>,
    pub noise: NoiseSpec,
}

impl fmt::Debug for SceneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SceneSpec")
            .field("curves", &self.curves)
            .field("noise", &self.noise)
            .finish()
    }
}

/// Gap between the ranges of the jump curves (multi-curve scenes).
#[derive(Debug, Clone, Serialize)]
pub struct SeparationReport {
    /// Smallest gap between the ranges `φ_j([0,1])` over all pairs.
    pub min_gap: f64,
    /// Largest `ρ` with disjoint `ρ`-neighbourhoods of the ranges (`min_gap / 2`).
    pub rho: f64,
    pub separated: bool,
}

impl SceneSpec {
    pub fn new(
        smooth: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        curves: Vec<JumpCurve>,
        noise: NoiseSpec,
    ) -> Self {
        SceneSpec {
            smooth: Arc::new(smooth),
            curves,
            noise,
        }
    }

    pub fn with_noise(&self, noise: NoiseSpec) -> Self {
        SceneSpec {
            noise,
            ..self.clone()
        }
    }

    /// Noiseless image intensity at `(x, y)`.
    pub fn mean(&self, x: f64, y: f64) -> f64 {
        let jumps: f64 = self
            .curves
            .iter()
            .filter(|c| y <= c.location.value(x))
            .map(|c| c.height(x))
            .sum();
        (self.smooth)(x, y) + jumps
    }

    /// Check positivity of the heights and that each curve maps into (0,1),
    /// on the design of an `n × n` grid.
    pub fn validate(&self, n: usize) -> Result<()> {
        self.noise.validate()?;
        for (k, c) in self.curves.iter().enumerate() {
            for i in 1..=n {
                let x = i as f64 / n as f64;
                let tau = c.height(x);
                if !(tau > 0.0) {
                    return Err(EdgeError::Validation(format!(
                        "jump height of curve {k} is {tau} at x = {x}; must be positive"
                    )));
                }
                let phi = c.location.value(x);
                if !(phi > 0.0 && phi < 1.0) {
                    return Err(EdgeError::Validation(format!(
                        "curve {k} leaves (0,1) at x = {x}: φ = {phi}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Range separation of the jump curves, evaluated on 2001 points.
    pub fn separation(&self) -> SeparationReport {
        let ranges: Vec<(f64, f64)> = self
            .curves
            .iter()
            .map(|c| {
                (0..=2000)
                    .map(|k| c.location.value(k as f64 / 2000.0))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .collect();
        let mut min_gap = f64::INFINITY;
        for (i, a) in ranges.iter().enumerate() {
            for b in &ranges[i + 1..] {
                let gap = (b.0 - a.1).max(a.0 - b.1);
                min_gap = min_gap.min(gap);
            }
        }
        SeparationReport {
            min_gap,
            rho: min_gap / 2.0,
            separated: min_gap > 0.0,
        }
    }
}

/// Draw an `n × n` image from the scene using the noise spec's seed/stream.
pub fn generate<T: Scalar>(spec: &SceneSpec, n: usize) -> Result<ImageGrid<T>> {
    if n < 8 {
        return Err(EdgeError::Argument(format!("grid side must be >= 8, got {n}")));
    }
    spec.validate(n)?;
    let noise = spec.noise.sample(n * n)?;
    let nf = n as f64;
    ImageGrid::from_fn(n, n, |i1, i2| {
        let x = (i1 + 1) as f64 / nf;
        let y = (i2 + 1) as f64 / nf;
        T::lit(spec.mean(x, y) + noise[i1 * n + i2])
    })
}

/// Scenes of the simulation study.
pub mod scenarios {
    use super::*;

    /// `m(x, y) = sin(y²) cos{(x - 1/2)²}`.
    pub fn smooth_background(x: f64, y: f64) -> f64 {
        (y * y).sin() * ((x - 0.5) * (x - 0.5)).cos()
    }

    /// `τ(x) = 3 sin²(10x)/10 + 1/2`.
    pub fn jump_height(x: f64) -> f64 {
        let s = (10.0 * x).sin();
        0.3 * s * s + 0.5
    }

    /// `φ1(x) = 1/4 + x/2`.
    pub fn linear_curve() -> Curve {
        Curve::new(|x| 0.25 + 0.5 * x, |_| 0.5)
    }

    /// `φ2(x) = -(x - 1/2)² + 3/5`.
    pub fn quadratic_curve() -> Curve {
        Curve::new(|x| -(x - 0.5) * (x - 0.5) + 0.6, |x| -2.0 * (x - 0.5))
    }

    fn single(curve: Curve, noise: NoiseSpec) -> SceneSpec {
        SceneSpec::new(
            smooth_background,
            vec![JumpCurve::new(curve, jump_height)],
            noise,
        )
    }

    /// Linear edge with t₁₀ noise of scale `sigma_tilde`.
    pub fn linear(sigma_tilde: f64, seed: u64) -> SceneSpec {
        single(linear_curve(), NoiseSpec::student_t(sigma_tilde, 10, seed))
    }

    /// Quadratic edge with t₁₀ noise of scale `sigma_tilde`.
    pub fn quadratic(sigma_tilde: f64, seed: u64) -> SceneSpec {
        single(quadratic_curve(), NoiseSpec::student_t(sigma_tilde, 10, seed))
    }

    /// Lower curve of the two-edge scene, `-(x - 1/2)² + 21/50`.
    pub fn two_curve_lower() -> Curve {
        Curve::new(|x| -(x - 0.5) * (x - 0.5) + 0.42, |x| -2.0 * (x - 0.5))
    }

    /// Two parallel parabolic edges 21/50 apart, both of height 3/2, with
    /// Gaussian noise of standard deviation `sigma`.
    pub fn two_curves(sigma: f64, seed: u64) -> SceneSpec {
        let lower = two_curve_lower();
        let upper = lower.shifted(0.42);
        SceneSpec::new(
            smooth_background,
            vec![JumpCurve::new(lower, |_| 1.5), JumpCurve::new(upper, |_| 1.5)],
            NoiseSpec::gaussian(sigma, seed),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless_linear() -> SceneSpec {
        SceneSpec::new(
            |_, _| 0.0,
            vec![JumpCurve::new(scenarios::linear_curve(), |_| 1.0)],
            NoiseSpec::none(),
        )
    }

    #[test]
    fn noiseless_indicator_image() {
        let n = 16;
        let g: ImageGrid<f64> = generate(&noiseless_linear(), n).unwrap();
        for i1 in 1..=n {
            for i2 in 1..=n {
                let expected = if (i2 as f64) / (n as f64) <= 0.25 + (i1 as f64) / (2.0 * n as f64)
                {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(g.get(i1 - 1, i2 - 1), expected);
            }
        }
    }

    #[test]
    fn column_differences_only_at_crossing() {
        let n = 64;
        let g: ImageGrid<f64> = generate(&noiseless_linear(), n).unwrap();
        for i1 in 0..n {
            let jumps: Vec<usize> = (0..n - 1)
                .filter(|&i2| g.get(i1, i2 + 1) != g.get(i1, i2))
                .collect();
            assert_eq!(jumps.len(), 1, "row {i1}");
        }
    }

    #[test]
    fn same_seed_same_image() {
        let spec = scenarios::linear(0.5, 42);
        let a: ImageGrid<f64> = generate(&spec, 32).unwrap();
        let b: ImageGrid<f64> = generate(&spec, 32).unwrap();
        assert_eq!(a, b);
        let c: ImageGrid<f64> = generate(&spec.with_noise(spec.noise.with_stream(1)), 32).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn student_t_sd() {
        let noise = NoiseSpec::student_t(0.5, 10, 7);
        let draws = noise.sample(100_000).unwrap();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / (draws.len() - 1) as f64;
        let target = 0.5 * (10.0f64 / 8.0).sqrt();
        assert!((noise.sd() - target).abs() < 1e-15);
        assert!((var.sqrt() / target - 1.0).abs() < 0.02, "{}", var.sqrt());
    }

    #[test]
    fn non_positive_height_is_rejected() {
        let spec = SceneSpec::new(
            |_, _| 0.0,
            vec![JumpCurve::new(scenarios::linear_curve(), |x| x - 0.5)],
            NoiseSpec::none(),
        );
        assert!(matches!(
            generate::<f64>(&spec, 16),
            Err(EdgeError::Validation(_))
        ));
        assert!(generate::<f64>(&noiseless_linear(), 4).is_err());
    }

    #[test]
    fn two_curve_scene_is_separated() {
        let report = scenarios::two_curves(0.1, 1).separation();
        assert!(report.separated);
        // ranges [0.17, 0.42] and [0.59, 0.84]
        assert!((report.min_gap - 0.17).abs() < 1e-9);
    }

    #[test]
    fn study_scene_matches_formula() {
        let spec = scenarios::linear(0.0, 0);
        let x: f64 = 0.3;
        let below = spec.mean(x, 0.2);
        let expected = (0.04f64).sin() * (0.04f64).cos() + scenarios::jump_height(x);
        assert!((below - expected).abs() < 1e-15);
    }
}

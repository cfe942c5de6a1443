use std::f64::consts::FRAC_PI_2;

use edgeband::confidence::{
    band_from_quantile, normal_quantile, pointwise_intervals, ScoreProcess, Target,
};
use edgeband::contrast::{contrast, contrast_gradient, ContrastQuery};
use edgeband::estimator::{
    contrast_profile, estimate_curve, estimate_strip, EdgeEstimate, EstimationConfig,
};
use edgeband::image::{generate, scenarios, ImageGrid, JumpCurve, Curve, NoiseSpec, SceneSpec};
use edgeband::kernels::{rotated_kernel, rotation, KernelPair, RotationAngle};
use edgeband::variance::{estimate_sigma, variance_components, KernelConstants, VarianceComponents};
use proptest::prelude::*;
use std::sync::OnceLock;

fn pair() -> &'static KernelPair<f64> {
    static P: OnceLock<KernelPair<f64>> = OnceLock::new();
    P.get_or_init(|| KernelPair::bump().unwrap())
}

fn noisy(seed: u64) -> ImageGrid<f64> {
    generate(&scenarios::quadratic(0.5, seed), 64).unwrap()
}

struct Fitted {
    est: EdgeEstimate<f64>,
    comps: VarianceComponents<f64>,
}

fn fitted() -> &'static Fitted {
    static F: OnceLock<Fitted> = OnceLock::new();
    F.get_or_init(|| {
        let grid = generate(&scenarios::linear(0.5, 21), 64).unwrap();
        let cfg = EstimationConfig::new(0.1, 64);
        let est = estimate_curve(&grid, pair(), &cfg).unwrap();
        let sigma = estimate_sigma(&grid, None).unwrap();
        let comps = variance_components(&est, &KernelConstants::bump().unwrap(), sigma).unwrap();
        Fitted { est, comps }
    })
}

fn process() -> &'static ScoreProcess {
    static S: OnceLock<ScoreProcess> = OnceLock::new();
    S.get_or_init(|| {
        let f = fitted();
        ScoreProcess::new(&f.est, &f.comps, pair(), Target::Phi)
    })
}

proptest! {
    #[test]
    fn rotation_is_orthogonal(psi in -10.0f64..10.0) {
        let r = rotation(psi);
        for i in 0..2 {
            for j in 0..2 {
                let dot = r[0][i] * r[0][j] + r[1][i] * r[1][j];
                let id = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - id).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotated_kernel_vanishes_outside_disk(
        r in 1.0f64..3.0, theta in 0.0f64..6.3, psi in -FRAC_PI_2..FRAC_PI_2, h in 0.01f64..0.4
    ) {
        let radius = r * h * 2f64.sqrt();
        let z = [radius * theta.cos(), radius * theta.sin()];
        let v = rotated_kernel(pair(), z, RotationAngle::new(psi).unwrap(), h).unwrap();
        prop_assert_eq!(v, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences(z1 in -0.95f64..0.95, z2 in -0.95f64..0.95) {
        let p = pair();
        let g = p.gradient([z1, z2]);
        let step = 1e-6;
        let d1 = (p.eval([z1 + step, z2]) - p.eval([z1 - step, z2])) / (2.0 * step);
        let d2 = (p.eval([z1, z2 + step]) - p.eval([z1, z2 - step])) / (2.0 * step);
        let scale = g[0].abs().max(g[1].abs()).max(1e-3);
        prop_assert!((g[0] - d1).abs() / scale < 1e-6);
        prop_assert!((g[1] - d2).abs() / scale < 1e-6);
    }

    #[test]
    fn product_kernel_parity(z1 in -1.2f64..1.2, z2 in -1.2f64..1.2) {
        let p = pair();
        prop_assert_eq!(p.eval([z1, z2]), -p.eval([z1, -z2]));
        prop_assert_eq!(p.eval([z1, z2]), p.eval([-z1, z2]));
    }

    #[test]
    fn phi_score_variance_is_bracketed(psi in -FRAC_PI_2..FRAC_PI_2) {
        let c = KernelConstants::bump().unwrap();
        let (a, b) = (c.vs_phi(0.0), c.vs_phi(FRAC_PI_2));
        let v = c.vs_phi(psi);
        prop_assert!(v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn contrast_is_linear(
        a in -3.0f64..3.0, b in -3.0f64..3.0,
        x in 0.15f64..0.85, y in 0.15f64..0.85, psi in -FRAC_PI_2..FRAC_PI_2, seed in 0u64..1000
    ) {
        let (g1, g2) = (noisy(seed), noisy(seed + 1));
        let mix = g1.zip_with(&g2, |u, v| a * u + b * v).unwrap();
        let q = ContrastQuery::new(x, y, psi, 0.1);
        let lhs = contrast(&mix, pair(), &q).unwrap();
        let rhs = a * contrast(&g1, pair(), &q).unwrap() + b * contrast(&g2, pair(), &q).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn contrast_ignores_far_pixels(
        x in 0.3f64..0.7, y in 0.3f64..0.7, psi in -FRAC_PI_2..FRAC_PI_2,
        i1 in 0usize..64, i2 in 0usize..64, bump in -50.0f64..50.0
    ) {
        let h = 0.08;
        let (px, py) = ((i1 + 1) as f64 / 64.0, (i2 + 1) as f64 / 64.0);
        prop_assume!(((px - x).powi(2) + (py - y).powi(2)).sqrt() > h * 2f64.sqrt());
        let g = noisy(3);
        let mut values = g.values().to_vec();
        values[i1 * 64 + i2] += bump;
        let changed = ImageGrid::from_vec(64, 64, values).unwrap();
        let q = ContrastQuery::new(x, y, psi, h);
        prop_assert_eq!(contrast(&changed, pair(), &q).unwrap(), contrast(&g, pair(), &q).unwrap());
    }

    #[test]
    fn contrast_gradient_matches_finite_differences(
        x in 0.2f64..0.8, y in 0.2f64..0.8, psi in -1.3f64..1.3, seed in 0u64..1000
    ) {
        let g = noisy(seed);
        let h = 0.1;
        let grad = contrast_gradient(&g, pair(), &ContrastQuery::new(x, y, psi, h)).unwrap();
        let m = |y: f64, psi: f64| contrast(&g, pair(), &ContrastQuery::new(x, y, psi, h)).unwrap();
        let step = 1e-5;
        let dw = (m(y + h * step, psi) - m(y - h * step, psi)) / (2.0 * step);
        let dpsi = (m(y, psi + step) - m(y, psi - step)) / (2.0 * step);
        prop_assert!((grad[0] - dw).abs() <= 1e-4 * grad[0].abs().max(1e-2));
        prop_assert!((grad[1] - dpsi).abs() <= 1e-4 * grad[1].abs().max(1e-2));
    }

    #[test]
    fn multipliers_enter_linearly(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let p = process();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let xi1: Vec<f64> = (0..p.slots()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xi2: Vec<f64> = (0..p.slots()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mix: Vec<f64> = xi1.iter().zip(&xi2).map(|(u, v)| a * u + b * v).collect();
        let (z1, z2, zm) = (p.evaluate(&xi1), p.evaluate(&xi2), p.evaluate(&mix));
        for k in 0..zm.len() {
            prop_assert!((zm[k] - a * z1[k] - b * z2[k]).abs() <= 1e-10 * (1.0 + zm[k].abs()));
        }
        let scaled: Vec<f64> = xi1.iter().map(|u| a * u).collect();
        prop_assert!((p.sup(&scaled) - a.abs() * p.sup(&xi1)).abs() <= 1e-10 * (1.0 + p.sup(&scaled)));
    }

    #[test]
    fn uniform_band_contains_pointwise_when_quantile_is_large(
        alpha in 0.01f64..0.3, extra in 0.0f64..2.0, t_n in 0.0f64..1.0
    ) {
        let f = fitted();
        let q = normal_quantile(1.0 - alpha / 2.0) + extra;
        let band = band_from_quantile(&f.est, &f.comps, Target::Phi, alpha, q, t_n);
        prop_assert!(band.is_nested());
    }

    #[test]
    fn pointwise_width_decreases_in_alpha(a1 in 0.001f64..0.9, a2 in 0.001f64..0.9) {
        prop_assume!(a1 < a2);
        let f = fitted();
        for target in [Target::Phi, Target::Psi, Target::Tau] {
            let (l1, u1) = pointwise_intervals(&f.est, &f.comps, target, a1);
            let (l2, u2) = pointwise_intervals(&f.est, &f.comps, target, a2);
            for k in 0..l1.len() {
                let (w1, w2) = (u1[k] - l1[k], u2[k] - l2[k]);
                prop_assert!(w1 >= w2 || (w1.is_infinite() && w2.is_infinite()));
                if w1.is_finite() && w2 > 0.0 {
                    let ratio = normal_quantile(1.0 - a1 / 2.0) / normal_quantile(1.0 - a2 / 2.0);
                    prop_assert!((w1 / w2 - ratio).abs() < 1e-9 * ratio);
                }
            }
        }
    }

    #[test]
    fn t_n_scales_band_width(t_n in 0.0f64..2.0, q in 1.0f64..5.0) {
        let f = fitted();
        let b0 = band_from_quantile(&f.est, &f.comps, Target::Phi, 0.05, q, 0.0);
        let b1 = band_from_quantile(&f.est, &f.comps, Target::Phi, 0.05, q, t_n);
        for k in 0..b0.center.len() {
            let (w0, w1) = (b0.upper[k] - b0.lower[k], b1.upper[k] - b1.lower[k]);
            if w0.is_finite() {
                prop_assert!((w1 - (1.0 + t_n) * w0).abs() <= 1e-12 * (1.0 + w1));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn strip_estimate_beats_coarse_grid_and_is_stationary(x in 0.2f64..0.8, seed in 0u64..1000) {
        let g = noisy(seed);
        let cfg = EstimationConfig::new(0.1, 64);
        let s = estimate_strip(&g, pair(), x, &cfg).unwrap();
        let profile = contrast_profile(&g, pair(), x, &cfg, (cfg.h, 1.0 - cfg.h));
        let best = profile.value.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.max_value >= best);
        let interior = s.phi > cfg.h + cfg.coarse_y_step
            && s.phi < 1.0 - cfg.h - cfg.coarse_y_step
            && s.psi.abs() < FRAC_PI_2 - cfg.coarse_psi_step;
        if interior {
            let grad = contrast_gradient(&g, pair(), &ContrastQuery::new(x, s.phi, s.psi, cfg.h)).unwrap();
            prop_assert!(grad[0].hypot(grad[1]) < 1e-5, "gradient {:?}", grad);
        }
        let again = estimate_strip(&g, pair(), x, &cfg).unwrap();
        prop_assert_eq!(s, again);
    }

    #[test]
    fn vertical_shift_moves_estimate(k in 1usize..6, x in 0.3f64..0.7) {
        let n = 64;
        let g: ImageGrid<f64> = generate(&scenarios::linear(0.0, 0), n).unwrap();
        let shifted = ImageGrid::from_fn(n, n, |i1, i2| g.get(i1, i2.saturating_sub(k))).unwrap();
        let cfg = EstimationConfig::new(0.1, n);
        let a = estimate_strip(&g, pair(), x, &cfg).unwrap();
        let b = estimate_strip(&shifted, pair(), x, &cfg).unwrap();
        let expected = k as f64 / n as f64;
        prop_assert!((b.phi - a.phi - expected).abs() <= 1.0 / n as f64);
    }
}

#[test]
fn t10_noise_moments() {
    let draws = NoiseSpec::student_t(0.5, 10, 4).sample(400_000).unwrap();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws.len() as f64;
    let target = 0.5 * (10.0f64 / 8.0).sqrt();
    assert!(mean.abs() < 0.005, "{mean}");
    assert!((var.sqrt() - target).abs() / target < 0.01, "{}", var.sqrt());
    assert_eq!(NoiseSpec::student_t(0.5, 10, 4).sd(), target);
}

#[test]
fn noise_streams_are_independent_and_reproducible() {
    let a = NoiseSpec::gaussian(1.0, 9).with_stream(1).sample(1000).unwrap();
    let b = NoiseSpec::gaussian(1.0, 9).with_stream(2).sample(1000).unwrap();
    assert_eq!(a, NoiseSpec::gaussian(1.0, 9).with_stream(1).sample(1000).unwrap());
    assert_ne!(a, b);
}

#[test]
fn f32_estimate_tracks_f64() {
    let scene = SceneSpec::new(
        |_, _| 0.0,
        vec![JumpCurve::new(Curve::new(|x| 0.3 + 0.2 * x, |_| 0.2), |_| 1.0)],
        NoiseSpec::none(),
    );
    let g64: ImageGrid<f64> = generate(&scene, 64).unwrap();
    let g32: ImageGrid<f32> = generate(&scene, 64).unwrap();
    let p32 = KernelPair::<f32>::bump().unwrap();
    let s64 = estimate_strip(&g64, pair(), 0.5, &EstimationConfig::new(0.1, 64)).unwrap();
    let s32 = estimate_strip(&g32, &p32, 0.5f32, &EstimationConfig::new(0.1f32, 64)).unwrap();
    assert!((s64.phi - s32.phi as f64).abs() < 1e-3);
    assert!((s64.psi - s32.psi as f64).abs() < 1e-2);
    assert!((s64.tau - s32.tau as f64).abs() < 1e-3);
}

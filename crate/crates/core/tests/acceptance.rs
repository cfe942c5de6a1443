//! Acceptance gate: one PASS/FAIL line per criterion, then a single
//! assertion that all of them passed.

use std::f64::consts::PI;

use edgeband::confidence::{
    band_from_quantile, bootstrap_sup_quantile, pointwise_intervals, BandConfig, ScoreProcess,
    Target, TnPolicy,
};
use edgeband::contrast::{contrast, contrast_gradient, AsymptoticContrast, ContrastQuery};
use edgeband::estimator::{default_bandwidth, estimate_curve, EdgeEstimate, EstimationConfig};
use edgeband::image::{generate, scenarios, Curve, ImageGrid, SceneSpec};
use edgeband::kernels::{check_kernel_conditions, KernelPair};
use edgeband::simulation::{run_study, Scenario, StudySpec};
use edgeband::variance::{asymptotic_sd_phi, variance_components, KernelConstants};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Gate {
    lines: Vec<(usize, bool, String)>,
}

impl Gate {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        println!("criterion {id}: {}  {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id, pass, detail));
    }
}

fn pair() -> KernelPair<f64> {
    KernelPair::bump().unwrap()
}

/// Estimate with the true angle and height plugged in.
fn oracle_estimate(curve: &Curve, xs: &[f64]) -> EdgeEstimate<f64> {
    EdgeEstimate {
        x_grid: xs.to_vec(),
        phi_hat: xs.iter().map(|&x| curve.value(x)).collect(),
        psi_hat: xs.iter().map(|&x| curve.angle(x)).collect(),
        tau_hat: xs.iter().map(|&x| scenarios::jump_height(x)).collect(),
        contrast_at_max: vec![0.0; xs.len()],
        h: 0.04,
        dims: (128, 128),
    }
}

fn criterion_1(gate: &mut Gate) {
    let xs = [0.040, 0.142, 0.347, 0.449, 0.653, 0.858];
    let tables: [(&str, Curve, [f64; 6], [f64; 6]); 2] = [
        (
            "phi1",
            scenarios::linear_curve(),
            [0.888, 0.611, 0.913, 0.617, 0.935, 0.725],
            [1.599, 1.100, 1.644, 1.111, 1.683, 1.305],
        ),
        (
            "phi2",
            scenarios::quadratic_curve(),
            [1.149, 0.691, 0.840, 0.540, 0.859, 0.820],
            [2.069, 1.244, 1.511, 0.972, 1.547, 1.477],
        ),
    ];
    let constants = KernelConstants::bump().unwrap();
    let mut worst = 0.0f64;
    let mut count = 0;
    for (_, curve, low, high) in &tables {
        let est = oracle_estimate(curve, &xs);
        for (sigma_tilde, expected) in [(0.5, low), (0.9, high)] {
            let sigma = sigma_tilde * (10.0f64 / 8.0).sqrt();
            let comps = variance_components(&est, &constants, sigma).unwrap();
            for (k, &x) in xs.iter().enumerate() {
                let sd = asymptotic_sd_phi(&comps, x, k).unwrap();
                worst = worst.max((sd - expected[k]).abs() / expected[k]);
                count += 1;
            }
        }
    }
    gate.record(
        1,
        worst <= 0.02,
        format!("{count} tabulated sd values, worst relative error {worst:.4} (limit 0.02)"),
    );
}

struct NoiselessErrors {
    phi: f64,
    psi: f64,
    tau_rel: f64,
}

fn noiseless_errors(scene: &SceneSpec, curve: &Curve, n: usize) -> NoiselessErrors {
    let grid: ImageGrid<f64> = generate(scene, n).unwrap();
    let cfg = EstimationConfig::new(default_bandwidth(n, 100), n);
    let est = estimate_curve(&grid, &pair(), &cfg).unwrap();
    let mut e = NoiselessErrors {
        phi: 0.0,
        psi: 0.0,
        tau_rel: 0.0,
    };
    for (k, &x) in est.x_grid.iter().enumerate() {
        let tau = scenarios::jump_height(x);
        e.phi = e.phi.max((est.phi_hat[k] - curve.value(x)).abs());
        e.psi = e.psi.max((est.psi_hat[k] - curve.angle(x)).abs());
        e.tau_rel = e.tau_rel.max((est.tau_hat[k] - tau).abs() / tau);
    }
    e
}

fn criterion_2_and_5(gate: &mut Gate) {
    let cases = [
        ("phi1", scenarios::linear(0.0, 0), scenarios::linear_curve()),
        ("phi2", scenarios::quadratic(0.0, 0), scenarios::quadratic_curve()),
    ];
    let mut pass2 = true;
    let mut detail2 = Vec::new();
    let mut pass5 = true;
    let mut detail5 = Vec::new();
    for (name, scene, curve) in &cases {
        let e = noiseless_errors(scene, curve, 128);
        pass2 &= e.phi <= 0.01 && e.psi <= 0.05 && e.tau_rel <= 0.05;
        detail2.push(format!(
            "{name}: phi {:.4} psi {:.4} tau_rel {:.4}",
            e.phi, e.psi, e.tau_rel
        ));
        let e256 = noiseless_errors(scene, curve, 256);
        let ratio = e256.phi / e.phi;
        pass5 &= ratio <= 0.7;
        detail5.push(format!(
            "{name}: {:.5} -> {:.5}, ratio {ratio:.3}",
            e.phi, e256.phi
        ));
    }
    gate.record(
        2,
        pass2,
        format!("{} (limits 0.01 / 0.05 / 0.05)", detail2.join("; ")),
    );
    gate.record(5, pass5, format!("{} (limit 0.7)", detail5.join("; ")));
}

fn criteria_3_4_9(gate: &mut Gate) {
    let mut spec = StudySpec::desk(Scenario::Phi1);
    spec.n_list = vec![128];
    spec.sigma_tilde_list = vec![0.5, 0.9];
    spec.alpha_list = vec![0.05];
    spec.reps = 100;
    spec.n_bootstrap = 2000;
    let report = run_study(&spec).unwrap();
    println!("phi1 study: {:.1} s", report.runtime_seconds);

    let low = report.cell(128, 0.5).unwrap();
    let l = &low.levels[0];
    let cov_ok = (0.91..=1.0).contains(&l.coverage_pointwise) && !low.failed;
    let width_ok = (l.width_pointwise - 0.025).abs() <= 0.2 * 0.025;
    gate.record(
        3,
        cov_ok && width_ok,
        format!(
            "coverage {:.3} (in [0.91, 1]), width {:.4} (0.025 +- 20%), median rep width {:.4}, {} unbounded points, {} failed reps",
            l.coverage_pointwise, l.width_pointwise, l.median_width_pointwise, low.unbounded_points, low.reps_failed
        ),
    );
    let cov_ok = (0.89..=1.0).contains(&l.coverage_uniform);
    let width_ok = (l.width_uniform - 0.051).abs() <= 0.25 * 0.051;
    gate.record(
        4,
        cov_ok && width_ok && l.t_n == 0.37,
        format!(
            "t_n {}, coverage {:.3} (in [0.89, 1]), width {:.4} (0.051 +- 25%), median rep width {:.4}, mean q_boot {:.3}",
            l.t_n, l.coverage_uniform, l.width_uniform, l.median_width_uniform, l.mean_quantile
        ),
    );

    let high = &report.cell(128, 0.9).unwrap().quantile_curves;
    let crossings = high.crossings();
    let crosses = crossings.iter().any(|c| (0.85..=0.99).contains(c));
    let gap_low = low.quantile_curves.gap_at(0.5).unwrap();
    gate.record(
        9,
        crosses && gap_low < 0.0,
        format!(
            "sigma 0.9 crossings at {:?} (need one in [0.85, 0.99]); sigma 0.5 bootstrap - empirical at 0.5 = {gap_low:.3} (need < 0)",
            crossings.iter().map(|c| (c * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    );
}

fn criterion_6(gate: &mut Gate) {
    let oracle = AsymptoticContrast::new(&pair()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ws: Vec<f64> = (0..=40).map(|k| -1.0 + k as f64 * 0.05).collect();
    let psis: Vec<f64> = (0..=64).map(|k| -PI / 2.0 + k as f64 * PI / 64.0).collect();
    let mut pass = true;
    let mut worst = 0.0f64;
    for curve in [scenarios::linear_curve(), scenarios::quadratic_curve()] {
        for _ in 0..20 {
            let x: f64 = rng.random_range(0.05..0.95);
            let (edge, tau) = (curve.angle(x), scenarios::jump_height(x));
            let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
            for (i, &w) in ws.iter().enumerate() {
                for (j, &psi) in psis.iter().enumerate() {
                    let v = oracle.eval_at(w, psi, edge, tau).unwrap();
                    if v > best.0 {
                        best = (v, i, j);
                    }
                }
            }
            let j0 = psis
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - edge).abs().total_cmp(&(b.1 - edge).abs()))
                .unwrap()
                .0;
            let i0 = 20;
            let at_truth = oracle.eval_at(0.0, edge, edge, tau).unwrap();
            worst = worst.max((best.0 - tau).abs()).max((at_truth - tau).abs());
            pass &= best.1 == i0 && best.2 == j0;
        }
    }
    pass &= worst <= 1e-3;
    gate.record(
        6,
        pass,
        format!("40 points, argmax at nearest grid point: {pass}, worst |value - tau| {worst:.2e}"),
    );
}

fn criterion_7(gate: &mut Gate) {
    let p = pair();
    let mut failures = Vec::new();

    let kernel = check_kernel_conditions(&p).unwrap();
    if !kernel.iter().all(|c| c.pass) {
        failures.push("kernel conditions".to_string());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 64;
    let noisy: ImageGrid<f64> = generate(&scenarios::quadratic(0.5, 3), n).unwrap();
    let other: ImageGrid<f64> = generate(&scenarios::linear(0.9, 4), n).unwrap();
    let h = 0.1;
    let mut worst_fd = 0.0f64;
    for _ in 0..20 {
        let x = rng.random_range(0.2..0.8);
        let y = rng.random_range(0.2..0.8);
        let psi = rng.random_range(-1.2..1.2);
        let q = ContrastQuery::new(x, y, psi, h);
        let g = contrast_gradient(&noisy, &p, &q).unwrap();
        let step = 1e-5;
        let m = |y: f64, psi: f64| contrast(&noisy, &p, &ContrastQuery::new(x, y, psi, h)).unwrap();
        let dw = (m(y + h * step, psi) - m(y - h * step, psi)) / (2.0 * step);
        let dpsi = (m(y, psi + step) - m(y, psi - step)) / (2.0 * step);
        let scale_w = g[0].abs().max(1e-2);
        let scale_p = g[1].abs().max(1e-2);
        worst_fd = worst_fd.max((g[0] - dw).abs() / scale_w).max((g[1] - dpsi).abs() / scale_p);

        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mix = noisy.zip_with(&other, |u, v| a * u + b * v).unwrap();
        let lhs = contrast(&mix, &p, &q).unwrap();
        let rhs = a * contrast(&noisy, &p, &q).unwrap() + b * contrast(&other, &p, &q).unwrap();
        if (lhs - rhs).abs() > 1e-9 * (1.0 + rhs.abs()) {
            failures.push(format!("linearity at ({x:.3}, {y:.3})"));
        }

        // a pixel farther than h√2 from the query point is never read
        let far = noisy
            .map(|v| v)
            .unwrap();
        let mut values = far.values().to_vec();
        let (i1, i2) = if x < 0.5 { (n - 1, n - 1) } else { (0, 0) };
        values[i1 * n + i2] += 100.0;
        let changed = ImageGrid::from_vec(n, n, values).unwrap();
        if contrast(&changed, &p, &q).unwrap() != contrast(&noisy, &p, &q).unwrap() {
            failures.push("locality".into());
        }
    }
    if worst_fd > 1e-4 {
        failures.push(format!("gradient vs finite difference {worst_fd:.2e}"));
    }

    let cfg = EstimationConfig::new(default_bandwidth(n, 100), n);
    let est = estimate_curve(&noisy, &p, &cfg).unwrap();
    let est2 = estimate_curve(&noisy, &p, &cfg).unwrap();
    if est != est2 {
        failures.push("estimation determinism".into());
    }
    let sigma = edgeband::variance::estimate_sigma(&noisy, None).unwrap();
    let comps = variance_components(&est, &KernelConstants::bump().unwrap(), sigma).unwrap();
    let process = ScoreProcess::new(&est, &comps, &p, Target::Phi);
    let xi1: Vec<f64> = (0..process.slots()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xi2: Vec<f64> = (0..process.slots()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (a, b) = (0.7, -1.3);
    let mixed: Vec<f64> = xi1.iter().zip(&xi2).map(|(u, v)| a * u + b * v).collect();
    let (z1, z2, zm) = (process.evaluate(&xi1), process.evaluate(&xi2), process.evaluate(&mixed));
    if (0..zm.len()).any(|k| (zm[k] - a * z1[k] - b * z2[k]).abs() > 1e-9 * (1.0 + zm[k].abs())) {
        failures.push("multiplier linearity".into());
    }
    if process.sup_samples(600, 9) != process.sup_samples(600, 9) {
        failures.push("bootstrap determinism".into());
    }

    let band_cfg = BandConfig {
        alpha: 0.05,
        n_bootstrap: 1000,
        t_n: TnPolicy::Fixed(0.2),
        target: Target::Phi,
        seed: 1,
    };
    let boot = bootstrap_sup_quantile(&est, &comps, &p, &band_cfg).unwrap();
    let band = band_from_quantile(&est, &comps, Target::Phi, 0.05, boot.quantile, 0.2);
    let z = edgeband::confidence::normal_quantile(0.975);
    if boot.quantile >= z && !band.is_nested() {
        failures.push("band nesting".into());
    }
    let mut prev = f64::INFINITY;
    for alpha in [0.01, 0.05, 0.1, 0.3, 0.5] {
        let (lo, hi) = pointwise_intervals(&est, &comps, Target::Phi, alpha);
        let w: f64 = lo.iter().zip(&hi).map(|(l, h)| h - l).filter(|w| w.is_finite()).sum();
        if w > prev {
            failures.push(format!("alpha monotonicity at {alpha}"));
        }
        prev = w;
        let q = edgeband::confidence::empirical_quantile(&boot.samples, 1.0 - alpha);
        let b = band_from_quantile(&est, &comps, Target::Phi, alpha, q, 0.2);
        if b.mean_width() > band.mean_width() + 1e-12 && alpha > 0.05 {
            failures.push(format!("band alpha monotonicity at {alpha}"));
        }
    }

    let mut tiny = StudySpec::desk(Scenario::Phi1);
    tiny.n_list = vec![64];
    tiny.sigma_tilde_list = vec![0.5];
    tiny.alpha_list = vec![0.05];
    tiny.reps = 2;
    tiny.n_bootstrap = 500;
    let r1 = run_study(&tiny).unwrap();
    let r2 = run_study(&tiny).unwrap();
    if !r1.same_results(&r2) {
        failures.push("study determinism".into());
    }

    gate.record(
        7,
        failures.is_empty(),
        format!(
            "{} kernel checks, gradient FD worst {worst_fd:.1e}, linearity, locality, multipliers, nesting, alpha monotonicity, determinism; failures: {:?}",
            kernel.len(),
            failures
        ),
    );
}

fn criterion_8(gate: &mut Gate) {
    let mut spec = StudySpec::desk(Scenario::Multi);
    spec.reps = 100;
    spec.n_bootstrap = 2000;
    let report = run_study(&spec).unwrap();
    let cell = &report.cells[0];
    let l = &cell.levels[0];
    let covered = (l.coverage_uniform * cell.reps_ok as f64).round() as usize;
    gate.record(
        8,
        covered >= 90 && cell.reps_ok == 100,
        format!(
            "{covered} of {} reps with both curves inside the Bonferroni bands (need >= 90), t_n {:.3}, mean width {:.4}, {:.1} s",
            cell.reps_ok, l.t_n, l.width_uniform, report.runtime_seconds
        ),
    );
}

#[test]
fn acceptance() {
    let mut gate = Gate { lines: Vec::new() };
    criterion_1(&mut gate);
    criterion_2_and_5(&mut gate);
    criterion_6(&mut gate);
    criterion_7(&mut gate);
    criteria_3_4_9(&mut gate);
    criterion_8(&mut gate);

    gate.lines.sort_by_key(|l| l.0);
    println!("summary");
    for (id, pass, _) in &gate.lines {
        println!("  {id}: {}", if *pass { "PASS" } else { "FAIL" });
    }
    let failed: Vec<usize> = gate.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

//! `edgeband` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 unreadable or malformed
//! input (including bad flags), 3 invalid configuration.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgeband::confidence::{uniform_band, BandConfig, BandResult, Target, TnPolicy};
use edgeband::estimator::{check_bandwidth, default_bandwidth, estimate_curve, EdgeEstimate, EstimationConfig};
use edgeband::image::{load_image, ImageFormat, ImageGrid};
use edgeband::kernels::{check_kernel_conditions, check_moment_assumption, KernelPair};
use edgeband::multiedge::{bonferroni_bands, detect_candidates, estimate_multi, MultiEdgeConfig};
use edgeband::simulation::{fmt9, run_study, write_quantile_curves, Scenario, StudySpec};
use edgeband::variance::{estimate_sigma, variance_components, KernelConstants, Region};
use edgeband::EdgeError;

#[derive(Parser, Debug)]
#[command(name = "edgeband", version, about = "Jump-curve estimation with confidence bands")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate location, angle and height of a single jump curve.
    Estimate(InputArgs),
    /// Point-wise intervals and a uniform band for one curve.
    Bands {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        band: BandArgs,
        #[arg(long, value_enum, default_value = "phi")]
        target: TargetArg,
    },
    /// Several separated jump curves with Bonferroni bands for the locations.
    Multi {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        band: BandArgs,
        #[arg(long, default_value_t = 2)]
        max_curves: usize,
    },
    /// Monte Carlo study on a simulated scene.
    Simulate(SimulateArgs),
    /// Kernel conditions, moment check and bandwidth range.
    Checks(ChecksArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "pgm")]
    format: FormatArg,
    /// Bandwidth; defaults to the points-per-window rule.
    #[arg(long, conflicts_with = "points_per_window")]
    h: Option<f64>,
    #[arg(long)]
    points_per_window: Option<usize>,
    /// Noise region `x0,y0,x1,y1` in unit coordinates.
    #[arg(long, value_parser = parse_region)]
    sigma_region: Option<Region>,
    #[arg(long, env = "EDGEBAND_SEED", default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct BandArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Fixed `t_n` or `auto` for `1/√(ln n)`.
    #[arg(long, default_value = "auto", value_parser = parse_tn)]
    tn: TnPolicy,
    #[arg(long, default_value_t = 4000)]
    bootstrap: usize,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output file; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON instead of CSV.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "phi1")]
    scenario: ScenarioArg,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Noise levels (t scale, or Gaussian sd for `multi`).
    #[arg(long, value_delimiter = ',')]
    sigma_tilde: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, conflicts_with = "points_per_window")]
    h: Option<f64>,
    #[arg(long)]
    points_per_window: Option<usize>,
    /// Overrides the built-in `t_n` table for every cell.
    #[arg(long, value_parser = parse_tn)]
    tn: Option<TnPolicy>,
    #[arg(long, env = "EDGEBAND_SEED")]
    seed: Option<u64>,
    /// Also write the quantile curves as CSV here.
    #[arg(long)]
    quantiles: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ChecksArgs {
    #[arg(long, default_value_t = 128)]
    n: usize,
    /// Bandwidth to test; defaults to the 100-point rule.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long)]
    json: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Pgm,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TargetArg {
    Phi,
    Psi,
    Tau,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ScenarioArg {
    Phi1,
    Phi2,
    Multi,
}

fn parse_region(s: &str) -> Result<Region, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x0, y0, x1, y1] if x0 < x1 && y0 < y1 => Ok(Region::new(x0, y0, x1, y1)),
        [_, _, _, _] => Err("need x0 < x1 and y0 < y1".into()),
        _ => Err(format!("expected 4 comma separated numbers, got {}", v.len())),
    }
}

fn parse_tn(s: &str) -> Result<TnPolicy, String> {
    if s == "auto" {
        return Ok(TnPolicy::InvSqrtLog);
    }
    s.parse::<f64>()
        .map(TnPolicy::Fixed)
        .map_err(|e| format!("expected a number or `auto`: {e}"))
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<EdgeError> for Failure {
    fn from(e: EdgeError) -> Self {
        let code = match &e {
            EdgeError::Parse { .. } | EdgeError::Io { .. } => 2,
            EdgeError::Config(_) | EdgeError::Argument(_) | EdgeError::Validation(_) => 3,
            EdgeError::Strip { source, .. } => match **source {
                EdgeError::Config(_) | EdgeError::Argument(_) | EdgeError::Validation(_) => 3,
                _ => 1,
            },
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: 1,
            message: format!("writing output: {e}"),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 3,
        message: message.into(),
    }
}

fn sink(out: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Failure {
            code: 1,
            message: format!("creating {}: {e}", p.display()),
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(out: &OutputArgs, value: &impl serde::Serialize) -> CliResult<()> {
    let mut w = sink(&out.out)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

struct Prepared {
    grid: ImageGrid<f64>,
    pair: KernelPair<f64>,
    cfg: EstimationConfig<f64>,
}

fn prepare(input: &InputArgs) -> CliResult<Prepared> {
    let format = match input.format {
        FormatArg::Pgm => ImageFormat::Pgm,
        FormatArg::Csv => ImageFormat::Csv,
    };
    let grid: ImageGrid<f64> = load_image(&input.input, format)?;
    let (n1, n2) = grid.dims();
    if n1 != n2 {
        log::warn!("non-square {n1}x{n2} image: axes are scaled separately");
    }
    let h = match (input.h, input.points_per_window) {
        (Some(h), _) => h,
        (None, Some(p)) => default_bandwidth(n2, p),
        (None, None) => default_bandwidth(n2, 100),
    };
    let cfg = EstimationConfig::new(h, n2);
    cfg.validate()?;
    Ok(Prepared {
        grid,
        pair: KernelPair::bump()?,
        cfg,
    })
}

fn band_config(b: &BandArgs, target: Target, seed: u64) -> CliResult<BandConfig> {
    let cfg = BandConfig {
        alpha: b.alpha,
        n_bootstrap: b.bootstrap,
        t_n: b.tn,
        target,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_estimate_csv(w: &mut dyn Write, est: &EdgeEstimate<f64>) -> io::Result<()> {
    writeln!(w, "x,phi_hat,psi_hat,tau_hat,contrast")?;
    for k in 0..est.len() {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt9(est.x_grid[k]),
            fmt9(est.phi_hat[k]),
            fmt9(est.psi_hat[k]),
            fmt9(est.tau_hat[k]),
            fmt9(est.contrast_at_max[k])
        )?;
    }
    Ok(())
}

fn write_band_rows(w: &mut dyn Write, b: &BandResult, prefix: &str) -> io::Result<()> {
    for k in 0..b.x_grid.len() {
        writeln!(
            w,
            "{prefix}{},{},{},{},{},{}",
            fmt9(b.x_grid[k]),
            fmt9(b.center[k]),
            fmt9(b.pointwise_lower[k]),
            fmt9(b.pointwise_upper[k]),
            fmt9(b.lower[k]),
            fmt9(b.upper[k])
        )?;
    }
    Ok(())
}

fn cmd_estimate(input: &InputArgs) -> CliResult<()> {
    let p = prepare(input)?;
    let est = estimate_curve(&p.grid, &p.pair, &p.cfg)?;
    if input.output.json {
        return write_json(&input.output, &est);
    }
    let mut w = sink(&input.output.out)?;
    write_estimate_csv(&mut w, &est)?;
    w.flush()?;
    Ok(())
}

#[derive(serde::Serialize)]
struct BandsOutput<'a> {
    sigma_hat: f64,
    estimate: &'a EdgeEstimate<f64>,
    band: &'a BandResult,
}

fn cmd_bands(input: &InputArgs, b: &BandArgs, target: TargetArg) -> CliResult<()> {
    let target = match target {
        TargetArg::Phi => Target::Phi,
        TargetArg::Psi => Target::Psi,
        TargetArg::Tau => Target::Tau,
    };
    let band_cfg = band_config(b, target, input.seed)?;
    let p = prepare(input)?;
    let est = estimate_curve(&p.grid, &p.pair, &p.cfg)?;
    let sigma = estimate_sigma(&p.grid, input.sigma_region)?;
    let comps = variance_components(&est, &KernelConstants::bump()?, sigma)?;
    let band = uniform_band(&est, &comps, &p.pair, &band_cfg)?;
    if input.output.json {
        return write_json(
            &input.output,
            &BandsOutput {
                sigma_hat: sigma,
                estimate: &est,
                band: &band,
            },
        );
    }
    let mut w = sink(&input.output.out)?;
    writeln!(
        w,
        "# q_boot={},t_n={},alpha={},sigma_hat={}",
        fmt9(band.quantile_boot),
        fmt9(band.t_n_used),
        band.alpha,
        fmt9(sigma)
    )?;
    writeln!(w, "x,center,pw_lo,pw_hi,unif_lo,unif_hi")?;
    write_band_rows(&mut w, &band, "")?;
    w.flush()?;
    Ok(())
}

#[derive(serde::Serialize)]
struct MultiOutput<'a> {
    sigma_hat: f64,
    estimates: &'a [EdgeEstimate<f64>],
    bands: &'a [BandResult],
}

fn cmd_multi(input: &InputArgs, b: &BandArgs, max_curves: usize) -> CliResult<()> {
    let band_cfg = band_config(b, Target::Phi, input.seed)?;
    let p = prepare(input)?;
    let mut mcfg = MultiEdgeConfig::new(p.cfg, max_curves, band_cfg);
    mcfg.sigma_region = input.sigma_region;
    mcfg.validate()?;
    let candidates = detect_candidates(&p.grid, &p.pair, &mcfg)?;
    let estimates = estimate_multi(&p.grid, &p.pair, &candidates, &mcfg)?;
    if estimates.is_empty() {
        return Err(Failure {
            code: 1,
            message: "no jump curve found".into(),
        });
    }
    let sigma = estimate_sigma(&p.grid, input.sigma_region)?;
    let constants = KernelConstants::bump()?;
    let comps = estimates
        .iter()
        .map(|e| variance_components(e, &constants, sigma))
        .collect::<Result<Vec<_>, _>>()?;
    let bands = bonferroni_bands(&estimates, &comps, &p.pair, &band_cfg)?;
    if input.output.json {
        return write_json(
            &input.output,
            &MultiOutput {
                sigma_hat: sigma,
                estimates: &estimates,
                bands: &bands,
            },
        );
    }
    let mut w = sink(&input.output.out)?;
    writeln!(
        w,
        "# curves={},alpha={},sigma_hat={}",
        bands.len(),
        band_cfg.alpha,
        fmt9(sigma)
    )?;
    writeln!(w, "curve,x,center,pw_lo,pw_hi,unif_lo,unif_hi")?;
    for (j, band) in bands.iter().enumerate() {
        write_band_rows(&mut w, band, &format!("{j},"))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let scenario = match a.scenario {
        ScenarioArg::Phi1 => Scenario::Phi1,
        ScenarioArg::Phi2 => Scenario::Phi2,
        ScenarioArg::Multi => Scenario::Multi,
    };
    let mut spec = StudySpec::desk(scenario);
    if let Some(v) = &a.n {
        spec.n_list = v.clone();
    }
    if let Some(v) = &a.sigma_tilde {
        spec.sigma_tilde_list = v.clone();
    }
    if let Some(v) = &a.alpha {
        spec.alpha_list = v.clone();
    }
    if let Some(v) = a.reps {
        spec.reps = v;
    }
    if let Some(v) = a.bootstrap {
        spec.n_bootstrap = v;
    }
    if let Some(h) = a.h {
        spec.bandwidth = Some(h);
    }
    if let Some(p) = a.points_per_window {
        spec.points_per_window = p;
        spec.bandwidth = None;
    }
    if let Some(tn) = a.tn {
        spec.t_n_table.clear();
        spec.t_n_default = tn;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let report = run_study(&spec)?;
    for c in &report.cells {
        for l in &c.levels {
            eprintln!(
                "n={} level={} alpha={} pw_cov={:.3} pw_width={:.4} unif_cov={:.3} unif_width={:.4} failed={}",
                c.n,
                c.sigma_tilde,
                l.alpha,
                l.coverage_pointwise,
                l.width_pointwise,
                l.coverage_uniform,
                l.width_uniform,
                c.reps_failed
            );
        }
    }
    if let Some(path) = &a.quantiles {
        let curves: Vec<_> = report
            .cells
            .iter()
            .map(|c| (c.n, c.sigma_tilde, c.quantile_curves.clone()))
            .collect();
        let mut w = sink(&Some(path.clone()))?;
        write_quantile_curves(&curves, &mut w)?;
        w.flush()?;
    }
    if a.output.json {
        return write_json(&a.output, &report);
    }
    let mut w = sink(&a.output.out)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    if report.cells.iter().any(|c| c.failed) {
        return Err(Failure {
            code: 1,
            message: "more than 5% of the replications failed in some cell".into(),
        });
    }
    Ok(())
}

fn cmd_checks(a: &ChecksArgs) -> CliResult<()> {
    let pair = KernelPair::<f64>::bump()?;
    let items = check_kernel_conditions(&pair)?;
    let moment = check_moment_assumption(&pair)?;
    let constants = KernelConstants::bump()?;
    let h = a.h.unwrap_or_else(|| default_bandwidth(a.n, 100));
    let bw = check_bandwidth(a.n, h, a.eta, a.c);
    if a.json {
        let value = serde_json::json!({
            "kernel": items,
            "moment": moment,
            "constants": constants,
            "bandwidth": bw,
        });
        println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
        return Ok(());
    }
    let mut w = io::stdout().lock();
    writeln!(w, "kernel conditions")?;
    for it in &items {
        let status = if it.pass { "pass" } else { "FAIL" };
        writeln!(w, "  {status}  {:<26} {:>14.6e}  target {}", it.name, it.value, it.target)?;
    }
    writeln!(w, "moment int_0^1 x K2(x) dx")?;
    writeln!(
        w,
        "  {}  value {:.6} (tolerance {:e}); slope/height rates {}",
        if moment.satisfied { "pass" } else { "FAIL" },
        moment.moment,
        moment.tolerance,
        if moment.slope_height_rates_available {
            "covered"
        } else {
            "not covered"
        }
    )?;
    writeln!(w, "kernel integrals")?;
    writeln!(w, "  K2'(0)              {:.9}", constants.k2_slope0)?;
    writeln!(w, "  int (K1'K2)^2       {:.9}", constants.grad1_sq)?;
    writeln!(w, "  int (K1K2')^2       {:.9}", constants.grad2_sq)?;
    writeln!(w, "  int y^2 K1          {:.9}", constants.k1_second_moment)?;
    writeln!(w, "  V^S_psi             {:.9}", constants.vs_psi)?;
    writeln!(w, "  V^S_tau             {:.9}", constants.vs_tau)?;
    writeln!(w, "bandwidth range (n = {}, eta = {}, C = {})", a.n, a.eta, a.c)?;
    writeln!(
        w,
        "  {}  h = {:.6} in [{:.6}, {:.6}]",
        if bw.pass { "pass" } else { "FAIL" },
        bw.h,
        bw.lower,
        bw.upper
    )?;
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(config_error("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| config_error(e.to_string()))?;
    }
    match &cli.command {
        Command::Estimate(input) => cmd_estimate(input),
        Command::Bands {
            input,
            band,
            target,
        } => cmd_bands(input, band, *target),
        Command::Multi {
            input,
            band,
            max_curves,
        } => cmd_multi(input, band, *max_curves),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Checks(a) => cmd_checks(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("edgeband: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

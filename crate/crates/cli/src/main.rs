//! `hyspec` command-line tool.
//!
//! Exit codes: 0 ok, 2 input or configuration error, 3 computation contract
//! violation, 4 LSD solver non-convergence at more than 1% of grid points.

mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use hyspec::estimators::{hy_matrix, rcv, srcv_matrix, CovMatrix};
use hyspec::format::{fmt_f64, fmt_human};
use hyspec::lsd::{linspace, lsd_cdf, LsdGrid, ModelSpec, Regime, SolverConfig};
use hyspec::simgen::{load_sigma, proxy_icv, replicate_study, simulate_panel, SimConfig, StudyConfig};
use hyspec::spectral::{cumulative_trapezoid, eigen_sym, ks_distance, Cdf, GridCdf, SpectrumJson};
use hyspec::sync::refresh_times;
use hyspec::tickdata::{load_ticks, save_ticks, LoadOptions};
use hyspec::nalgebra::DMatrix;
use hyspec::Error;

use manifest::RunManifest;

const LONG_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (rng: ChaCha20)");

#[derive(Parser, Debug)]
#[command(name = "hyspec", version = LONG_VERSION, about = "Covariance estimation from asynchronous ticks and spectral analysis")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate an asynchronous tick panel.
    Simulate(SimulateArgs),
    /// Estimate the integrated covariance matrix of a tick panel.
    Estimate(EstimateArgs),
    /// Eigen-decompose a covariance matrix.
    Spectrum(SpectrumArgs),
    /// Solve for a limiting spectral distribution.
    Lsd(LsdArgs),
    /// KS distance between a spectrum and an LSD or a second spectrum.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    p: usize,
    /// Ticks per asset: one value for all assets or a comma-separated list.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    /// `identity` or a matrix file (covariance JSON or headerless CSV).
    #[arg(long, default_value = "identity")]
    sigma: String,
    #[arg(long)]
    seed: u64,
    /// Also write the realized covariance on this many fine synchronous steps.
    #[arg(long)]
    proxy_grid: Option<usize>,
    /// Also run this many replications of the HY-vs-LSD study.
    #[arg(long)]
    study_reps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EstimatorArg {
    Rcv,
    Hy,
    Srcv,
}

#[derive(Args, Debug, Serialize)]
struct EstimateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    estimator: EstimatorArg,
    /// The price column holds raw prices to be logged.
    #[arg(long)]
    prices_raw: bool,
    /// Add a time-0 observation to assets that lack one.
    #[arg(long)]
    prepend_open: bool,
    /// Panel horizon (default: largest time).
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SpectrumArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum RegimeArg {
    CPositive,
    CZero,
}

#[derive(Args, Debug, Serialize)]
struct LsdArgs {
    #[arg(long)]
    model: PathBuf,
    /// `xmin:xmax:steps`.
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Must agree with the model file when given.
    #[arg(long, value_enum)]
    regime: Option<RegimeArg>,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    /// Solve every grid point independently instead of continuing from its neighbour.
    #[arg(long)]
    no_warm_start: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct CompareArgs {
    /// Spectrum JSON.
    #[arg(long)]
    esd: PathBuf,
    /// LSD JSON or a second spectrum JSON.
    #[arg(long)]
    lsd: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Error carrying the process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl std::fmt::Display) -> Self {
        Self { code: 2, message: message.to_string() }
    }

    fn contract(message: impl std::fmt::Display) -> Self {
        Self { code: 3, message: message.to_string() }
    }
}

/// Errors raised while reading inputs are input errors whatever their kind.
fn input_err(e: Error) -> Failure {
    Failure::input(e)
}

fn compute_err(e: Error) -> Failure {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Config(_) | Error::Json(_) => Failure::input(e),
        Error::NonConvergence { .. } => Failure { code: 4, message: e.to_string() },
        _ => Failure::contract(e),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::input(format!("{}: {e}", path.display()))
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let started = Instant::now();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a, started),
        Command::Estimate(a) => estimate(a, started),
        Command::Spectrum(a) => spectrum(a, started),
        Command::Lsd(a) => lsd(a, started),
        Command::Compare(a) => compare(a, started),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn prepare_out(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn params<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(Failure::contract)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(io_err(path))
}

fn finish(manifest: &mut RunManifest, out: &Path, started: Instant) -> CmdResult {
    manifest.write(out, started.elapsed()).map_err(io_err(out))
}

fn save_matrix(cov: &CovMatrix, out: &Path, stem: &str, manifest: &mut RunManifest) -> CmdResult {
    let json = out.join(format!("{stem}.json"));
    let csv = out.join(format!("{stem}.csv"));
    cov.save_json(&json).map_err(compute_err)?;
    cov.save_csv(&csv).map_err(compute_err)?;
    manifest.outputs.push(format!("{stem}.json"));
    manifest.outputs.push(format!("{stem}.csv"));
    Ok(())
}

fn simulate(args: &SimulateArgs, started: Instant) -> CmdResult {
    let mut manifest = RunManifest::new("simulate", params(args));
    manifest.seed = Some(args.seed);
    let sigma = if args.sigma == "identity" {
        DMatrix::identity(args.p, args.p)
    } else {
        let path = Path::new(&args.sigma);
        manifest.add_input(path).map_err(io_err(path))?;
        load_sigma(path).map_err(input_err)?
    };
    let n_per_asset = match args.n.as_slice() {
        [n] => vec![*n; args.p],
        list => list.to_vec(),
    };
    let cfg = SimConfig {
        p: args.p,
        n_per_asset,
        horizon: args.horizon,
        sigma,
        seed: args.seed,
        proxy_grid: args.proxy_grid,
    };
    cfg.validate().map_err(input_err)?;
    prepare_out(&args.out)?;

    let panel = simulate_panel(&cfg).map_err(compute_err)?;
    save_ticks(&panel, args.out.join("ticks.csv")).map_err(compute_err)?;
    manifest.outputs.push("ticks.csv".into());
    if cfg.proxy_grid.is_some() {
        let proxy = proxy_icv(&cfg).map_err(compute_err)?;
        save_matrix(&proxy, &args.out, "proxy_icv", &mut manifest)?;
    }
    if let Some(reps) = args.study_reps {
        let report = replicate_study(&StudyConfig::new(cfg.clone(), reps)).map_err(compute_err)?;
        write_json(&args.out.join("study.json"), &report)?;
        manifest.outputs.push("study.json".into());
        println!("mean KS vs LSD   {}", fmt_human(report.mean_ks.vs_lsd));
        if let Some(v) = report.mean_ks.vs_proxy {
            println!("mean KS vs proxy {}", fmt_human(v));
        }
        println!("negative HY eigenvalues {}", report.total_negative_eigenvalues());
    }
    println!("simulated {} assets, {} ticks", cfg.p, cfg.n_per_asset.iter().sum::<usize>());
    finish(&mut manifest, &args.out, started)
}

fn estimate(args: &EstimateArgs, started: Instant) -> CmdResult {
    let mut manifest = RunManifest::new("estimate", params(args));
    manifest.add_input(&args.input).map_err(io_err(&args.input))?;
    let opts = LoadOptions {
        prices_raw: args.prices_raw,
        prepend_open: args.prepend_open,
        horizon: args.horizon,
    };
    let panel = load_ticks(&args.input, &opts).map_err(input_err)?;
    prepare_out(&args.out)?;
    let name = format!("{:?}", args.estimator).to_lowercase();
    let cov = match args.estimator {
        EstimatorArg::Rcv => refresh_times(&panel).and_then(|grid| rcv(&panel, &grid)),
        EstimatorArg::Hy => hy_matrix(&panel),
        EstimatorArg::Srcv => srcv_matrix(&panel),
    }
    .map_err(|e| Failure::contract(format!("{name} estimator: {e}")))?;
    save_matrix(&cov, &args.out, "matrix", &mut manifest)?;

    if let Some(counts) = cov.sample_counts() {
        let ids = cov.asset_ids();
        let mut text = String::from("asset_i,asset_j,count,fallback\n");
        for i in 0..cov.p() {
            for j in i..cov.p() {
                let fallback = cov.fallback_pairs().contains(&(i, j));
                text.push_str(&format!("{},{},{},{}\n", ids[i], ids[j], counts[(i, j)], fallback));
            }
        }
        write_text(&args.out.join("pair_counts.csv"), &text)?;
        manifest.outputs.push("pair_counts.csv".into());
    }
    for &(i, j) in cov.fallback_pairs() {
        eprintln!(
            "warning: srcv pair ({}, {}) has fewer than 2 synchronized returns, used HY",
            cov.asset_ids()[i],
            cov.asset_ids()[j]
        );
    }
    println!("{name} estimate for {} assets, trace {}", cov.p(), fmt_human(cov.trace()));
    finish(&mut manifest, &args.out, started)
}

fn spectrum(args: &SpectrumArgs, started: Instant) -> CmdResult {
    let mut manifest = RunManifest::new("spectrum", params(args));
    manifest.add_input(&args.input).map_err(io_err(&args.input))?;
    let text = fs::read_to_string(&args.input).map_err(io_err(&args.input))?;
    let json: hyspec::estimators::MatrixJson = serde_json::from_str(&text).map_err(Failure::input)?;
    let cov = CovMatrix::from_json(json).map_err(|e| match e {
        Error::NotSymmetric { .. } => Failure::contract(e),
        other => Failure::input(other),
    })?;
    let es = eigen_sym(cov.matrix()).map_err(compute_err)?;
    let top_k = args.top_k.min(cov.p());
    let spec = SpectrumJson::build(&es, top_k, cov.trace()).map_err(compute_err)?;
    prepare_out(&args.out)?;
    let path = args.out.join("spectrum.json");
    spec.save(&path).map_err(compute_err)?;

    let mut eig = String::from("rank,eigenvalue\n");
    for (k, v) in spec.eigenvalues.iter().enumerate() {
        eig.push_str(&format!("{},{}\n", k + 1, fmt_f64(*v)));
    }
    write_text(&args.out.join("eigenvalues.csv"), &eig)?;
    let mut cdf = String::from("x,cdf\n");
    for [x, f] in &spec.esd_cdf {
        cdf.push_str(&format!("{},{}\n", fmt_f64(*x), fmt_f64(*f)));
    }
    write_text(&args.out.join("esd_cdf.csv"), &cdf)?;
    let mut vecs = String::from("asset_id");
    for k in 0..top_k {
        vecs.push_str(&format!(",v{}", k + 1));
    }
    vecs.push('\n');
    for (i, id) in cov.asset_ids().iter().enumerate() {
        vecs.push_str(id);
        for v in &spec.top_vectors {
            vecs.push(',');
            vecs.push_str(&fmt_f64(v[i]));
        }
        vecs.push('\n');
    }
    write_text(&args.out.join("top_vectors.csv"), &vecs)?;
    manifest.outputs.extend(
        ["spectrum.json", "eigenvalues.csv", "esd_cdf.csv", "top_vectors.csv"].map(String::from),
    );

    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "rank  eigenvalue");
    for (k, v) in spec.eigenvalues.iter().take(10).enumerate() {
        let _ = writeln!(stdout, "{:>4}  {}", k + 1, fmt_human(*v));
    }
    if let Some(g) = spec.gap_ratio {
        let _ = writeln!(stdout, "gap ratio {}", fmt_human(g));
    }
    if spec.negative_eigenvalues > 0 {
        let _ = writeln!(stdout, "negative eigenvalues {}", spec.negative_eigenvalues);
    }
    finish(&mut manifest, &args.out, started)
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Failure::input(format!("grid must be xmin:xmax:steps, got {spec:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) || steps < 2 {
        return Err(bad());
    }
    Ok(linspace(lo, hi, steps))
}

fn lsd(args: &LsdArgs, started: Instant) -> CmdResult {
    let mut manifest = RunManifest::new("lsd", params(args));
    manifest.add_input(&args.model).map_err(io_err(&args.model))?;
    let grid = parse_grid(&args.grid)?;
    let spec = ModelSpec::load(&args.model).map_err(input_err)?;
    if let Some(r) = args.regime {
        let wanted = match r {
            RegimeArg::CPositive => Regime::CPositive,
            RegimeArg::CZero => Regime::CZero,
        };
        if wanted != spec.regime {
            return Err(Failure::input(format!(
                "--regime {r:?} disagrees with the model file's regime {:?}",
                spec.regime
            )));
        }
    }
    let base = args.model.parent().unwrap_or(Path::new("."));
    if let MatrixInput::File(path) = matrix_input(&spec, base) {
        manifest.add_input(&path).map_err(io_err(&path))?;
    }
    let report = spec.validate(base).map_err(input_err)?;
    prepare_out(&args.out)?;
    write_json(&args.out.join("assumptions.json"), &report)?;
    manifest.outputs.push("assumptions.json".into());
    let model = match spec.build(base) {
        Ok(m) => m,
        Err(e) => {
            finish(&mut manifest, &args.out, started)?;
            return Err(Failure::input(e));
        }
    };
    let cfg = SolverConfig {
        tol: args.tol,
        max_iters: args.max_iters,
        warm_start: !args.no_warm_start,
        ..Default::default()
    };
    let out: LsdGrid = lsd_cdf(&model, &grid, args.epsilon, &cfg).map_err(compute_err)?;
    out.save(args.out.join("lsd.json")).map_err(compute_err)?;
    let mut csv = String::from("x,s_re,s_im,density,cdf,residual,iters,converged\n");
    let cdf = out.cdf.clone().unwrap_or_default();
    for (k, x) in out.grid.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt_f64(*x),
            fmt_f64(out.s_re[k]),
            fmt_f64(out.s_im[k]),
            fmt_f64(out.density[k]),
            fmt_f64(cdf[k]),
            fmt_f64(out.residuals[k]),
            out.iters[k],
            out.converged[k]
        ));
    }
    write_text(&args.out.join("lsd.csv"), &csv)?;
    manifest.outputs.extend(["lsd.json", "lsd.csv"].map(String::from));
    finish(&mut manifest, &args.out, started)?;

    let failures = out.failures();
    println!(
        "solved {} points, {} failed, mass {}",
        out.grid.len(),
        failures,
        fmt_human(cdf.last().copied().unwrap_or(0.0))
    );
    if failures * 100 > out.grid.len() {
        return Err(Failure {
            code: 4,
            message: format!("solver failed at {failures} of {} grid points", out.grid.len()),
        });
    }
    Ok(())
}

enum MatrixInput {
    Atoms,
    File(PathBuf),
}

fn matrix_input(spec: &ModelSpec, base: &Path) -> MatrixInput {
    match &spec.h {
        hyspec::lsd::MeasureSpec::Matrix { matrix_file } => MatrixInput::File(base.join(matrix_file)),
        hyspec::lsd::MeasureSpec::Atoms { .. } => MatrixInput::Atoms,
    }
}

/// Reference distribution for `compare`.
enum Reference {
    Spectrum(hyspec::SpectralMeasure),
    Lsd(GridCdf),
}

impl Reference {
    fn as_cdf(&self) -> &dyn Cdf {
        match self {
            Reference::Spectrum(m) => m,
            Reference::Lsd(g) => g,
        }
    }
}

fn load_reference(path: &Path) -> Result<Reference, Failure> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Failure::input)?;
    if value.get("eigenvalues").is_some() {
        let spec: SpectrumJson = serde_json::from_value(value).map_err(Failure::input)?;
        return Ok(Reference::Spectrum(spec.measure().map_err(input_err)?));
    }
    let lsd: LsdGrid = serde_json::from_value(value).map_err(Failure::input)?;
    let cdf = match lsd.cdf {
        Some(c) => c,
        None => cumulative_trapezoid(&lsd.grid, &lsd.density)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect(),
    };
    Ok(Reference::Lsd(GridCdf::new(lsd.grid, cdf).map_err(input_err)?))
}

fn compare(args: &CompareArgs, started: Instant) -> CmdResult {
    let mut manifest = RunManifest::new("compare", params(args));
    manifest.add_input(&args.esd).map_err(io_err(&args.esd))?;
    manifest.add_input(&args.lsd).map_err(io_err(&args.lsd))?;
    let empirical = SpectrumJson::load(&args.esd)
        .and_then(|s| s.measure())
        .map_err(input_err)?;
    let reference = load_reference(&args.lsd)?;
    let ks = ks_distance(&empirical, reference.as_cdf());

    let mut xs = empirical.breakpoints();
    xs.extend(reference.as_cdf().breakpoints());
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut csv = String::from("x,F_emp,F_lsd\n");
    for x in &xs {
        csv.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(*x),
            fmt_f64(empirical.cdf(*x)),
            fmt_f64(reference.as_cdf().cdf(*x))
        ));
    }
    prepare_out(&args.out)?;
    let kind = match reference {
        Reference::Spectrum(_) => "spectrum",
        Reference::Lsd(_) => "lsd",
    };
    write_json(&args.out.join("compare.json"), &json!({ "ks": ks, "reference": kind }))?;
    write_text(&args.out.join("overlay.csv"), &csv)?;
    manifest.outputs.extend(["compare.json", "overlay.csv"].map(String::from));
    println!("KS distance {}", fmt_human(ks));
    finish(&mut manifest, &args.out, started)
}

//! Limiting spectral distributions of the integrated covariance estimators.
//!
//! Two regimes are covered.
//!
//! **`p/n -> c > 0`.** With `H` the limit of the population spectrum and
//! `τ'` the weight process on `[0, 1]`, write
//!
//! ```text
//! g(u)   = ∫₀¹ τ'_t / (1 + c τ'_t u) dt
//! s̃(z)  = -∫ λ / (z - λ g(s̃(z))) dH(λ)
//! s(z)   = -∫ 1 / (z - λ g(s̃(z))) dH(λ)
//! ```
//!
//! `s̃` is found as a fixed point and `s` is then a plain integral.
//!
//! **`p/n -> 0`.** With `τ̄ > 0`,
//!
//! ```text
//! β(z) = -∫ λ / (z + τ̄ λ β(z)) dH(λ)
//! s(z) = -∫ 1 / (z + τ̄ λ β(z)) dH(λ)
//! ```
//!
//! Both maps send the upper half-plane into itself. The solver runs a
//! fixed-point iteration (damped once the residual starts to oscillate) and
//! tries a Newton step on every iteration, keeping it only when it stays in
//! the upper half-plane and lowers the residual. Every returned point carries
//! its residual `|u - map(u)|`.
//!
//! `H` is a discrete measure and `τ'` is piecewise constant, so every
//! integral above is a finite sum.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::CovMatrix;
use crate::spectral::{cumulative_trapezoid, eigen_sym, esd, SpectralMeasure};

/// Piecewise-constant nonnegative weight process on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TauProcess {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl TauProcess {
    /// `breakpoints` runs from 0 to 1 strictly increasing; `values[k]` holds on
    /// `[breakpoints[k], breakpoints[k + 1])`.
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_tau_shape(&breakpoints, &values).map_err(Error::Validation)?;
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(Error::Validation(format!("τ' must be nonnegative, found {v}")));
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(vec![0.0, 1.0], vec![value])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(length, value)` of each constant piece.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.breakpoints
            .windows(2)
            .zip(&self.values)
            .map(|(b, v)| (b[1] - b[0], *v))
    }

    /// `∫₀¹ τ'_t dt`.
    pub fn integral(&self) -> f64 {
        self.segments().map(|(len, v)| len * v).sum()
    }

    /// `∫₀¹ (τ'_t)² dt`.
    pub fn integral_sq(&self) -> f64 {
        self.segments().map(|(len, v)| len * v * v).sum()
    }
}

fn check_tau_shape(breakpoints: &[f64], values: &[f64]) -> std::result::Result<(), String> {
    if breakpoints.len() < 2 || values.len() + 1 != breakpoints.len() {
        return Err(format!(
            "τ' needs k + 1 breakpoints for k values, got {} and {}",
            breakpoints.len(),
            values.len()
        ));
    }
    if breakpoints[0] != 0.0 || breakpoints[breakpoints.len() - 1] != 1.0 {
        return Err("τ' breakpoints must start at 0 and end at 1".into());
    }
    if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err("τ' breakpoints must be strictly increasing".into());
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err("τ' values must be finite".into());
    }
    Ok(())
}

/// Model for the `p/n -> c > 0` regime.
#[derive(Debug, Clone, PartialEq)]
pub struct LsdModel {
    c: f64,
    h: SpectralMeasure,
    tau: TauProcess,
}

impl LsdModel {
    pub fn new(c: f64, h: SpectralMeasure, tau: TauProcess) -> Result<Self> {
        let report = check_positive_c(Some(c), &h, Some((tau.breakpoints(), tau.values())));
        report.into_result()?;
        Ok(Self { c, h, tau })
    }

    /// Population spectrum `δ_1`, `τ' ≡ 1`: the Marchenko-Pastur law.
    pub fn marchenko_pastur(c: f64) -> Result<Self> {
        Self::new(c, SpectralMeasure::point_mass(1.0), TauProcess::constant(1.0)?)
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn h(&self) -> &SpectralMeasure {
        &self.h
    }

    pub fn tau(&self) -> &TauProcess {
        &self.tau
    }

    fn g(&self, u: Complex64) -> (Complex64, Complex64) {
        let mut g = Complex64::new(0.0, 0.0);
        let mut dg = Complex64::new(0.0, 0.0);
        for (len, v) in self.tau.segments() {
            let denom = 1.0 + self.c * v * u;
            g += len * v / denom;
            dg -= len * self.c * v * v / (denom * denom);
        }
        (g, dg)
    }
}

/// Model for the `p/n -> 0` regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroCModel {
    h: SpectralMeasure,
    tau_bar: f64,
}

impl ZeroCModel {
    pub fn new(h: SpectralMeasure, tau_bar: f64) -> Result<Self> {
        check_zero_c(Some(tau_bar), &h).into_result()?;
        Ok(Self { h, tau_bar })
    }

    pub fn h(&self) -> &SpectralMeasure {
        &self.h
    }

    pub fn tau_bar(&self) -> f64 {
        self.tau_bar
    }
}

/// Either regime.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    PositiveC(LsdModel),
    ZeroC(ZeroCModel),
}

impl From<LsdModel> for Model {
    fn from(m: LsdModel) -> Self {
        Model::PositiveC(m)
    }
}

impl From<ZeroCModel> for Model {
    fn from(m: ZeroCModel) -> Self {
        Model::ZeroC(m)
    }
}

/// A self-map `u -> map(u)` of the upper half-plane whose fixed point
/// determines `s(z)`.
trait FixedPointSystem {
    /// `(map(u), d map / du)`.
    fn map(&self, z: Complex64, u: Complex64) -> (Complex64, Complex64);
    fn stieltjes(&self, z: Complex64, u: Complex64) -> Complex64;
}

impl FixedPointSystem for LsdModel {
    fn map(&self, z: Complex64, u: Complex64) -> (Complex64, Complex64) {
        let (g, dg) = self.g(u);
        let mut value = Complex64::new(0.0, 0.0);
        let mut slope = Complex64::new(0.0, 0.0);
        for (&l, &w) in self.h.atoms().iter().zip(self.h.weights()) {
            let denom = z - l * g;
            value -= w * l / denom;
            slope -= w * l * l / (denom * denom);
        }
        (value, slope * dg)
    }

    fn stieltjes(&self, z: Complex64, u: Complex64) -> Complex64 {
        let (g, _) = self.g(u);
        self.h
            .atoms()
            .iter()
            .zip(self.h.weights())
            .map(|(&l, &w)| -w / (z - l * g))
            .sum()
    }
}

impl FixedPointSystem for ZeroCModel {
    fn map(&self, z: Complex64, u: Complex64) -> (Complex64, Complex64) {
        let mut value = Complex64::new(0.0, 0.0);
        let mut slope = Complex64::new(0.0, 0.0);
        for (&l, &w) in self.h.atoms().iter().zip(self.h.weights()) {
            let denom = z + self.tau_bar * l * u;
            value -= w * l / denom;
            slope += w * l * l * self.tau_bar / (denom * denom);
        }
        (value, slope)
    }

    fn stieltjes(&self, z: Complex64, u: Complex64) -> Complex64 {
        self.h
            .atoms()
            .iter()
            .zip(self.h.weights())
            .map(|(&l, &w)| -w / (z + self.tau_bar * l * u))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// Relaxation applied once the residual oscillates.
    pub damping: f64,
    /// Try a safeguarded Newton step on every iteration.
    pub newton: bool,
    /// Warm-start each grid point from its neighbour (sequential) instead of
    /// solving every point independently (parallel).
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 10_000,
            damping: 0.5,
            newton: true,
            warm_start: true,
        }
    }
}

/// Solution of one system at one `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StieltjesPoint {
    pub z: Complex64,
    /// `s(z)`.
    pub s: Complex64,
    /// The auxiliary unknown: `s̃(z)` or `β(z)`.
    pub aux: Complex64,
    pub residual: f64,
    pub iters: usize,
}

fn solve_system<S: FixedPointSystem>(
    sys: &S,
    z: Complex64,
    init: Complex64,
    cfg: &SolverConfig,
) -> Result<StieltjesPoint> {
    if z.im.is_nan() || z.im <= 0.0 {
        return Err(Error::Domain(format!("need Im z > 0, got {z}")));
    }
    let mut u = init;
    if !u.is_finite() || u.im <= 0.0 {
        u = -1.0 / z;
    }
    let mut theta = 1.0;
    let mut prev_residual = f64::INFINITY;
    let mut prev_trend = 0i8;
    let mut alternations = 0;
    let mut iters = 0;
    let (mut image, mut slope) = sys.map(z, u);
    let mut residual = (image - u).norm();
    while residual > cfg.tol {
        if iters >= cfg.max_iters {
            return Err(Error::NonConvergence { iters, residual });
        }
        iters += 1;

        let trend = if residual > prev_residual { 1 } else { -1 };
        if prev_trend != 0 && trend != prev_trend {
            alternations += 1;
        } else {
            alternations = 0;
        }
        if alternations >= 2 {
            theta = cfg.damping;
        }
        prev_trend = trend;
        prev_residual = residual;

        if cfg.newton {
            let denom = 1.0 - slope;
            if denom.norm() > 0.0 {
                let candidate = u - (u - image) / denom;
                if candidate.im > 0.0 && candidate.is_finite() {
                    let (ci, cs) = sys.map(z, candidate);
                    let cr = (ci - candidate).norm();
                    if cr < residual {
                        u = candidate;
                        image = ci;
                        slope = cs;
                        residual = cr;
                        continue;
                    }
                }
            }
        }
        u = (1.0 - theta) * u + theta * image;
        (image, slope) = sys.map(z, u);
        residual = (image - u).norm();
    }
    Ok(StieltjesPoint {
        z,
        s: sys.stieltjes(z, u),
        aux: u,
        residual,
        iters,
    })
}

/// Solves the `c > 0` system at `z`, starting from `s̃ = -1/z`.
pub fn solve_c_positive(model: &LsdModel, z: Complex64, cfg: &SolverConfig) -> Result<StieltjesPoint> {
    solve_system(model, z, -1.0 / z, cfg)
}

pub fn solve_c_positive_from(
    model: &LsdModel,
    z: Complex64,
    init: Complex64,
    cfg: &SolverConfig,
) -> Result<StieltjesPoint> {
    solve_system(model, z, init, cfg)
}

/// Solves the `c = 0` system at `z`, starting from `β = -1/z`.
pub fn solve_c_zero(model: &ZeroCModel, z: Complex64, cfg: &SolverConfig) -> Result<StieltjesPoint> {
    solve_system(model, z, -1.0 / z, cfg)
}

pub fn solve_c_zero_from(
    model: &ZeroCModel,
    z: Complex64,
    init: Complex64,
    cfg: &SolverConfig,
) -> Result<StieltjesPoint> {
    solve_system(model, z, init, cfg)
}

impl Model {
    pub fn solve(&self, z: Complex64, init: Option<Complex64>, cfg: &SolverConfig) -> Result<StieltjesPoint> {
        let init = init.unwrap_or(-1.0 / z);
        match self {
            Model::PositiveC(m) => solve_system(m, z, init, cfg),
            Model::ZeroC(m) => solve_system(m, z, init, cfg),
        }
    }
}

/// Per-point results along `x + iε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsdGrid {
    pub grid: Vec<f64>,
    pub epsilon: f64,
    pub s_re: Vec<f64>,
    pub s_im: Vec<f64>,
    pub density: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cdf: Option<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iters: Vec<usize>,
    pub converged: Vec<bool>,
}

impl LsdGrid {
    pub fn failures(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Density `Im s(x + iε) / π` along the grid. Points whose solve fails are
/// flagged in `converged` and carry density 0.
pub fn lsd_density(model: &Model, x_grid: &[f64], eps: f64, cfg: &SolverConfig) -> Result<LsdGrid> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Domain(format!("inversion needs ε > 0, got {eps}")));
    }
    let zs: Vec<Complex64> = x_grid.iter().map(|&x| Complex64::new(x, eps)).collect();
    let points: Vec<Option<StieltjesPoint>> = if cfg.warm_start {
        let mut prev: Option<Complex64> = None;
        zs.iter()
            .map(|&z| {
                let solved = model.solve(z, prev, cfg).or_else(|_| model.solve(z, None, cfg)).ok();
                prev = solved.map(|p| p.aux);
                solved
            })
            .collect()
    } else {
        zs.par_iter().map(|&z| model.solve(z, None, cfg).ok()).collect()
    };
    let mut out = LsdGrid {
        grid: x_grid.to_vec(),
        epsilon: eps,
        s_re: Vec::with_capacity(zs.len()),
        s_im: Vec::with_capacity(zs.len()),
        density: Vec::with_capacity(zs.len()),
        cdf: None,
        residuals: Vec::with_capacity(zs.len()),
        iters: Vec::with_capacity(zs.len()),
        converged: Vec::with_capacity(zs.len()),
    };
    for p in points {
        match p {
            Some(p) => {
                out.s_re.push(p.s.re);
                out.s_im.push(p.s.im);
                out.density.push((p.s.im / std::f64::consts::PI).max(0.0));
                out.residuals.push(p.residual);
                out.iters.push(p.iters);
                out.converged.push(true);
            }
            None => {
                out.s_re.push(0.0);
                out.s_im.push(0.0);
                out.density.push(0.0);
                out.residuals.push(f64::MAX);
                out.iters.push(cfg.max_iters);
                out.converged.push(false);
            }
        }
    }
    Ok(out)
}

/// Density plus its running trapezoid integral, clamped to `[0, 1]`.
pub fn lsd_cdf(model: &Model, x_grid: &[f64], eps: f64, cfg: &SolverConfig) -> Result<LsdGrid> {
    let mut out = lsd_density(model, x_grid, eps, cfg)?;
    let cdf = cumulative_trapezoid(&out.grid, &out.density)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    out.cdf = Some(cdf);
    Ok(out)
}

/// First and last grid points where the density exceeds `threshold`.
pub fn support_edges(x: &[f64], density: &[f64], threshold: f64) -> Option<(f64, f64)> {
    let first = density.iter().position(|d| *d > threshold)?;
    let last = density.iter().rposition(|d| *d > threshold)?;
    Some((x[first], x[last]))
}

/// Evenly spaced grid `[lo, hi]` with `steps` points.
pub fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps)
            .map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64)
            .collect(),
    }
}

/// Closed-form Marchenko-Pastur Stieltjes transform at ratio `c`, the
/// branch with `Im s > 0`.
pub fn marchenko_pastur_stieltjes(c: f64, z: Complex64) -> Complex64 {
    let root = ((z - 1.0 - c) * (z - 1.0 - c) - 4.0 * c).sqrt();
    let a = ((1.0 - c - z) + root) / (2.0 * c * z);
    if a.im > 0.0 {
        a
    } else {
        ((1.0 - c - z) - root) / (2.0 * c * z)
    }
}

/// Marchenko-Pastur support `[(1 - √c)², (1 + √c)²]`.
pub fn marchenko_pastur_support(c: f64) -> (f64, f64) {
    ((1.0 - c.sqrt()).powi(2), (1.0 + c.sqrt()).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    CPositive,
    CZero,
}

/// JSON form of `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureSpec {
    Atoms { atoms: Vec<f64>, weights: Vec<f64> },
    Matrix { matrix_file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSpec {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

/// Model input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub regime: Regime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_bar: Option<f64>,
    #[serde(rename = "H")]
    pub h: MeasureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<TauSpec>,
}

impl ModelSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    /// Resolves `H` (matrix files are relative to `base_dir`) into a
    /// measure, without validating it.
    pub fn measure(&self, base_dir: &Path) -> Result<RawMeasure> {
        match &self.h {
            MeasureSpec::Atoms { atoms, weights } => Ok(RawMeasure {
                atoms: atoms.clone(),
                weights: weights.clone(),
            }),
            MeasureSpec::Matrix { matrix_file } => {
                let path = if matrix_file.is_absolute() {
                    matrix_file.clone()
                } else {
                    base_dir.join(matrix_file)
                };
                let cov = CovMatrix::load_json(path)?;
                let es = eigen_sym(cov.matrix())?;
                let m = esd(es.values())?;
                Ok(RawMeasure {
                    atoms: m.atoms().to_vec(),
                    weights: m.weights().to_vec(),
                })
            }
        }
    }

    /// Numeric assumption checks on the raw inputs.
    pub fn validate(&self, base_dir: &Path) -> Result<AssumptionReport> {
        let h = self.measure(base_dir)?;
        Ok(validate_assumptions(self, &h))
    }

    /// Validates and builds the model; any failed check is an error.
    pub fn build(&self, base_dir: &Path) -> Result<Model> {
        let raw = self.measure(base_dir)?;
        validate_assumptions(self, &raw).into_result()?;
        let h = SpectralMeasure::new(raw.atoms, raw.weights)?;
        match self.regime {
            Regime::CPositive => {
                let tau = match &self.tau {
                    Some(t) => TauProcess::new(t.breakpoints.clone(), t.values.clone())?,
                    None => TauProcess::constant(1.0)?,
                };
                let c = self.c.ok_or_else(|| Error::Config("c_positive regime needs `c`".into()))?;
                Ok(LsdModel::new(c, h, tau)?.into())
            }
            Regime::CZero => {
                let tau_bar = self
                    .tau_bar
                    .ok_or_else(|| Error::Config("c_zero regime needs `tau_bar`".into()))?;
                Ok(ZeroCModel::new(h, tau_bar)?.into())
            }
        }
    }
}

/// Unvalidated atoms and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMeasure {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub id: String,
    pub passed: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    fn push(&mut self, id: &str, passed: bool, message: impl Into<String>) {
        self.checks.push(AssumptionCheck {
            id: id.into(),
            passed,
            message: message.into(),
        });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn violations(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn into_result(self) -> Result<()> {
        if self.all_passed() {
            return Ok(());
        }
        let msgs: Vec<String> = self.violations().map(|c| format!("{}: {}", c.id, c.message)).collect();
        Err(Error::Config(format!("model assumptions violated: {}", msgs.join("; "))))
    }
}

/// Checks the numerically verifiable model assumptions: `c > 0`, `H` a
/// probability measure on `[0, ∞)` other than `δ_0` with finite second
/// moment, `τ'` nonnegative with finite first and second integrals, and
/// `τ̄ > 0`. Never fails; violations are listed in the report.
pub fn validate_assumptions(spec: &ModelSpec, h: &RawMeasure) -> AssumptionReport {
    match spec.regime {
        Regime::CPositive => check_positive_c_raw(
            spec.c,
            h,
            spec.tau
                .as_ref()
                .map(|t| (t.breakpoints.as_slice(), t.values.as_slice())),
        ),
        Regime::CZero => check_zero_c_raw(spec.tau_bar, h),
    }
}

fn check_zero_c(tau_bar: Option<f64>, h: &SpectralMeasure) -> AssumptionReport {
    let raw = RawMeasure {
        atoms: h.atoms().to_vec(),
        weights: h.weights().to_vec(),
    };
    check_zero_c_raw(tau_bar, &raw)
}

fn check_zero_c_raw(tau_bar: Option<f64>, h: &RawMeasure) -> AssumptionReport {
    let mut report = AssumptionReport::default();
    check_measure(&mut report, "B3", h);
    check_tau_bar(&mut report, tau_bar);
    report
}

fn check_positive_c(c: Option<f64>, h: &SpectralMeasure, tau: Option<(&[f64], &[f64])>) -> AssumptionReport {
    let raw = RawMeasure {
        atoms: h.atoms().to_vec(),
        weights: h.weights().to_vec(),
    };
    check_positive_c_raw(c, &raw, tau)
}

fn check_positive_c_raw(c: Option<f64>, h: &RawMeasure, tau: Option<(&[f64], &[f64])>) -> AssumptionReport {
    let mut report = AssumptionReport::default();
    match c {
        Some(c) if c.is_finite() && c > 0.0 => report.push("A1", true, format!("c = {c} > 0")),
        Some(c) => report.push("A1", false, format!("aspect ratio c = {c} must be positive")),
        None => report.push("A1", false, "aspect ratio c is missing"),
    }
    check_measure(&mut report, "A2", h);
    match tau {
        None => report.push("A5", true, "τ' ≡ 1"),
        Some((b, v)) => match check_tau_shape(b, v) {
            Err(msg) => report.push("A5", false, msg),
            Ok(()) => {
                if let Some(neg) = v.iter().find(|x| **x < 0.0) {
                    report.push("A5", false, format!("τ' takes the negative value {neg}"));
                } else {
                    let first: f64 = b.windows(2).zip(v).map(|(w, x)| (w[1] - w[0]) * x).sum();
                    let second: f64 = b.windows(2).zip(v).map(|(w, x)| (w[1] - w[0]) * x * x).sum();
                    report.push(
                        "A5",
                        first.is_finite() && second.is_finite(),
                        format!("∫τ' = {first}, ∫τ'² = {second}"),
                    );
                }
            }
        },
    }
    report
}

fn check_tau_bar(report: &mut AssumptionReport, tau_bar: Option<f64>) {
    match tau_bar {
        Some(t) if t.is_finite() && t > 0.0 => report.push("B6", true, format!("τ̄ = {t} > 0")),
        Some(t) => report.push("B6", false, format!("τ̄ = {t} must be positive")),
        None => report.push("B6", false, "τ̄ is missing"),
    }
}

fn check_measure(report: &mut AssumptionReport, id: &str, h: &RawMeasure) {
    if h.atoms.is_empty() || h.atoms.len() != h.weights.len() {
        report.push(id, false, "H needs matching nonempty atoms and weights");
        return;
    }
    if h.atoms.iter().chain(&h.weights).any(|v| !v.is_finite()) {
        report.push(id, false, "H has non-finite atoms or weights");
        return;
    }
    if h.weights.iter().any(|w| *w < 0.0) || (h.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        report.push(id, false, "H weights must be nonnegative and sum to 1");
        return;
    }
    if let Some(a) = h.atoms.iter().find(|a| **a < 0.0) {
        report.push(id, false, format!("H has mass at the negative point {a}; a covariance spectrum lives on [0, ∞)"));
        return;
    }
    let mass_at_zero: f64 = h
        .atoms
        .iter()
        .zip(&h.weights)
        .filter(|(a, _)| **a == 0.0)
        .map(|(_, w)| w)
        .sum();
    if (mass_at_zero - 1.0).abs() <= 1e-12 {
        report.push(id, false, "H must not be the delta measure at 0");
        return;
    }
    let second: f64 = h.atoms.iter().zip(&h.weights).map(|(a, w)| w * a * a).sum();
    report.push(
        id,
        second.is_finite(),
        format!("H is a probability measure with second moment {second}"),
    );
}

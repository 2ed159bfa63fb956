//! Synthetic asynchronous tick panels from a driftless Brownian diffusion
//! with constant covariance `Σ`.
//!
//! Random numbers come from ChaCha20 (`rand_chacha::ChaCha20Rng`). The
//! master seed keys the generator; replication `r` draws its panel from
//! stream `2r` and its fine-grid proxy from stream `2r + 1`. Within a stream
//! the draw order is: arrival times, normal vectors (row by row), then the
//! shuffle that assigns times to assets.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{check_symmetric, hy_matrix, CovMatrix, EstimatorKind};
use crate::lsd::{linspace, lsd_cdf, LsdModel, Model, SolverConfig, TauProcess};
use crate::spectral::{eigen_sym, esd, ks_distance, GridCdf};
use crate::tickdata::{TickPanel, TickSeries};

/// Name of the generator, reported by the CLI.
pub const RNG_ALGORITHM: &str = "ChaCha20";

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub p: usize,
    /// Ticks per asset, excluding the open.
    pub n_per_asset: Vec<usize>,
    pub horizon: f64,
    /// Covariance of the increments per unit time.
    pub sigma: DMatrix<f64>,
    pub seed: u64,
    /// Steps of the fine synchronous grid used by [`proxy_icv`].
    pub proxy_grid: Option<usize>,
}

impl SimConfig {
    /// `p` assets with `n` ticks each, `Σ = I`, horizon 1.
    pub fn identity(p: usize, n: usize, seed: u64) -> Self {
        Self {
            p,
            n_per_asset: vec![n; p],
            horizon: 1.0,
            sigma: DMatrix::identity(p, p),
            seed,
            proxy_grid: None,
        }
    }

    pub fn with_sigma(mut self, sigma: DMatrix<f64>) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_proxy_grid(mut self, steps: usize) -> Self {
        self.proxy_grid = Some(steps);
        self
    }

    pub fn asset_ids(&self) -> Vec<String> {
        let width = self.p.to_string().len();
        (1..=self.p).map(|i| format!("s{i:0width$}")).collect()
    }

    /// Checks the configuration and returns the PSD square root of `Σ`.
    pub fn validate(&self) -> Result<DMatrix<f64>> {
        if self.p == 0 {
            return Err(Error::Config("need at least one asset".into()));
        }
        if self.n_per_asset.len() != self.p {
            return Err(Error::Config(format!(
                "{} tick counts given for {} assets",
                self.n_per_asset.len(),
                self.p
            )));
        }
        if let Some(n) = self.n_per_asset.iter().find(|n| **n < 2) {
            return Err(Error::Config(format!("each asset needs at least 2 ticks, got {n}")));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.sigma.nrows() != self.p || self.sigma.ncols() != self.p {
            return Err(Error::Config(format!(
                "sigma is {}x{}, expected {}x{}",
                self.sigma.nrows(),
                self.sigma.ncols(),
                self.p,
                self.p
            )));
        }
        if let Some(0) = self.proxy_grid {
            return Err(Error::Config("proxy grid needs at least one step".into()));
        }
        psd_sqrt(&self.sigma)
    }
}

/// Symmetric square root of a PSD matrix. Eigenvalues in `[-1e-12·‖Σ‖, 1e-12)`
/// are treated as 0; anything more negative is rejected.
pub fn psd_sqrt(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("sigma has non-finite entries".into()));
    }
    let scale = sigma.amax().max(1.0);
    check_symmetric(sigma, 1e-12 * scale).map_err(|e| Error::Config(format!("sigma: {e}")))?;
    let es = eigen_sym(sigma).map_err(|e| Error::Config(format!("sigma: {e}")))?;
    let floor = -1e-12 * scale;
    if let Some(l) = es.values().iter().find(|l| **l < floor) {
        return Err(Error::Config(format!("sigma is not positive semidefinite (eigenvalue {l:e})")));
    }
    let roots = DVector::from_iterator(
        es.dim(),
        es.values().iter().map(|&l| if l < 1e-12 { 0.0 } else { l.sqrt() }),
    );
    let v = es.vectors();
    let root = v * DMatrix::from_diagonal(&roots) * v.transpose();
    // exact symmetry
    Ok((&root + root.transpose()) * 0.5)
}

/// `Σ = idio·I + factor·11ᵀ`: one common factor loading equally on every asset.
pub fn planted_factor(p: usize, idio: f64, factor: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| factor + if i == j { idio } else { 0.0 })
}

/// Reads `Σ` from a covariance JSON file or a headerless numeric CSV.
pub fn load_sigma(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(CovMatrix::load_json(path)?.matrix().clone());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: line as u64 + 1,
            message: e.to_string(),
        })?;
        let row = record
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|e| Error::Parse {
                    line: line as u64 + 1,
                    message: format!("{v:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let p = rows.len();
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(Error::Config(format!("{}: sigma must be a square matrix", path.display())));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws one panel from stream 0 of `cfg.seed`.
pub fn simulate_panel(cfg: &SimConfig) -> Result<TickPanel> {
    simulate_replication(cfg, 0)
}

/// Draws the panel of replication `rep`.
///
/// All `n = Σ n_i` arrival times are uniform on `[0, D]`; the price vector
/// moves by `sqrt(Δt) · Σ^{1/2} z` between consecutive times; the times are
/// then shuffled and cut into consecutive blocks of sizes `n_i`, one block per
/// asset. Every asset also observes the open `(0, 0)`.
pub fn simulate_replication(cfg: &SimConfig, rep: u64) -> Result<TickPanel> {
    let root = cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 2 * rep);
    let p = cfg.p;
    let n: usize = cfg.n_per_asset.iter().sum();

    let mut times: Vec<f64> = (0..n).map(|_| cfg.horizon * rng.random::<f64>()).collect();
    times.sort_by(f64::total_cmp);
    // A zero or repeated draw has probability ~n²·2⁻⁵³; nudge it upward so
    // the time set stays strictly increasing and away from the open.
    let mut prev = 0.0f64;
    for t in &mut times {
        if *t <= prev {
            *t = prev.next_up();
        }
        prev = *t;
    }
    if prev > cfg.horizon {
        return Err(Error::Config("horizon too small to hold distinct tick times".into()));
    }

    let mut paths = DMatrix::<f64>::zeros(p, n);
    let mut level = DVector::<f64>::zeros(p);
    let mut last = 0.0;
    for (j, &t) in times.iter().enumerate() {
        let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        level += (&root * z) * (t - last).sqrt();
        paths.set_column(j, &level);
        last = t;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut offset = 0;
    let mut series = Vec::with_capacity(p);
    for (asset, (id, &count)) in cfg.asset_ids().into_iter().zip(&cfg.n_per_asset).enumerate() {
        let mut block = order[offset..offset + count].to_vec();
        offset += count;
        block.sort_unstable();
        let mut ts = Vec::with_capacity(count + 1);
        let mut xs = Vec::with_capacity(count + 1);
        ts.push(0.0);
        xs.push(0.0);
        for j in block {
            ts.push(times[j]);
            xs.push(paths[(asset, j)]);
        }
        series.push(TickSeries::new(id, ts, xs)?);
    }
    TickPanel::new(cfg.horizon, series)
}

/// Realized covariance of the diffusion observed on `proxy_grid` equal steps,
/// drawn from stream 1 of `cfg.seed`.
pub fn proxy_icv(cfg: &SimConfig) -> Result<CovMatrix> {
    proxy_replication(cfg, 0)
}

pub fn proxy_replication(cfg: &SimConfig, rep: u64) -> Result<CovMatrix> {
    let root = cfg.validate()?;
    let steps = cfg
        .proxy_grid
        .ok_or_else(|| Error::Config("proxy ICV needs a proxy grid size".into()))?;
    let mut rng = stream_rng(cfg.seed, 2 * rep + 1);
    let p = cfg.p;
    let dt_sqrt = (cfg.horizon / steps as f64).sqrt();
    let mut acc = DMatrix::<f64>::zeros(p, p);
    for _ in 0..steps {
        let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let dx = (&root * z) * dt_sqrt;
        for i in 0..p {
            for j in i..p {
                acc[(i, j)] += dx[i] * dx[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            acc[(i, j)] = acc[(j, i)];
        }
    }
    CovMatrix::new(EstimatorKind::ProxyIcv, cfg.asset_ids(), acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub reps: usize,
    /// Points of the LSD grid.
    pub lsd_steps: usize,
    /// Imaginary offset used to invert the limiting Stieltjes transform.
    pub epsilon: f64,
}

impl StudyConfig {
    pub fn new(sim: SimConfig, reps: usize) -> Self {
        Self {
            sim,
            reps,
            lsd_steps: 2000,
            epsilon: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyParams {
    pub p: usize,
    pub n_per_asset: Vec<usize>,
    pub horizon: f64,
    pub sigma_eigenvalues: Vec<f64>,
    pub seed: u64,
    pub reps: usize,
    pub proxy_grid: Option<usize>,
    pub aspect_ratio: f64,
    pub lsd_steps: usize,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepKs {
    pub vs_lsd: f64,
    pub vs_proxy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanKs {
    pub vs_lsd: f64,
    pub vs_proxy: Option<f64>,
}

/// Output of [`replicate_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub params: StudyParams,
    pub per_rep_ks: Vec<RepKs>,
    pub mean_ks: MeanKs,
    /// HY eigenvalues of each replication, descending.
    pub eigenvalue_samples: Vec<Vec<f64>>,
    pub negative_eigenvalue_counts: Vec<usize>,
    /// LSD points whose solve did not converge.
    pub lsd_failures: usize,
}

impl StudyReport {
    pub fn total_negative_eigenvalues(&self) -> usize {
        self.negative_eigenvalue_counts.iter().sum()
    }
}

/// Runs `reps` independent simulations and compares each HY spectrum with
/// the `c > 0` LSD (`H` = spectrum of `Σ·D`, `τ' ≡ 1`, `c = p / n̄`) and, when
/// a proxy grid is configured, with the fine-grid proxy spectrum.
/// Replications run in parallel; the result does not depend on scheduling.
pub fn replicate_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let sim = &cfg.sim;
    sim.validate()?;
    if cfg.reps == 0 {
        return Err(Error::Config("study needs at least one replication".into()));
    }
    let icv = &sim.sigma * sim.horizon;
    let icv_spectrum = eigen_sym(&icv)?;
    let n_mean = sim.n_per_asset.iter().sum::<usize>() as f64 / sim.p as f64;
    let c = sim.p as f64 / n_mean;

    let h = esd(&icv_spectrum.values().iter().map(|l| l.max(0.0)).collect::<Vec<_>>())?;
    let top = icv_spectrum.values()[0].max(1e-12);
    let upper = top * (1.0 + c.sqrt()).powi(2) * 1.25 + 0.1 * top;
    let grid = linspace(0.0, upper, cfg.lsd_steps.max(2));
    let model: Model = LsdModel::new(c, h, TauProcess::constant(1.0)?)?.into();
    let solved = lsd_cdf(&model, &grid, cfg.epsilon, &SolverConfig::default())?;
    let lsd = GridCdf::new(solved.grid.clone(), solved.cdf.clone().unwrap_or_default())?;

    let reps: Vec<(RepKs, Vec<f64>, usize)> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<_> {
            let panel = simulate_replication(sim, rep)?;
            let hy = hy_matrix(&panel)?;
            let es = eigen_sym(hy.matrix())?;
            let empirical = esd(es.values())?;
            let vs_lsd = ks_distance(&empirical, &lsd);
            let vs_proxy = match sim.proxy_grid {
                Some(_) => {
                    let proxy = proxy_replication(sim, rep)?;
                    let proxy_es = eigen_sym(proxy.matrix())?;
                    Some(ks_distance(&empirical, &esd(proxy_es.values())?))
                }
                None => None,
            };
            let negatives = es.values().iter().filter(|l| **l < 0.0).count();
            Ok((RepKs { vs_lsd, vs_proxy }, es.values().to_vec(), negatives))
        })
        .collect::<Result<_>>()?;

    let r = reps.len() as f64;
    let mean_lsd = reps.iter().map(|x| x.0.vs_lsd).sum::<f64>() / r;
    let mean_proxy = sim
        .proxy_grid
        .map(|_| reps.iter().filter_map(|x| x.0.vs_proxy).sum::<f64>() / r);
    let (per_rep_ks, rest): (Vec<_>, Vec<_>) = reps.into_iter().map(|(k, e, n)| (k, (e, n))).unzip();
    let (eigenvalue_samples, negative_eigenvalue_counts) = rest.into_iter().unzip();
    Ok(StudyReport {
        params: StudyParams {
            p: sim.p,
            n_per_asset: sim.n_per_asset.clone(),
            horizon: sim.horizon,
            sigma_eigenvalues: eigen_sym(&sim.sigma)?.values().to_vec(),
            seed: sim.seed,
            reps: cfg.reps,
            proxy_grid: sim.proxy_grid,
            aspect_ratio: c,
            lsd_steps: cfg.lsd_steps,
            epsilon: cfg.epsilon,
        },
        per_rep_ks,
        mean_ks: MeanKs {
            vs_lsd: mean_lsd,
            vs_proxy: mean_proxy,
        },
        eigenvalue_samples,
        negative_eigenvalue_counts,
        lsd_failures: solved.failures(),
    })
}

/// Width between the 5th and 95th percentiles of a sample (linear
/// interpolation between order statistics).
pub fn inter_quantile_width(values: &[f64], lo: f64, hi: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let k = pos.floor() as usize;
        let frac = pos - k as f64;
        if k + 1 < v.len() {
            v[k] + frac * (v[k + 1] - v[k])
        } else {
            v[k]
        }
    };
    q(hi) - q(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn same_seed_same_panel() {
        let cfg = SimConfig::identity(3, 20, 11);
        assert_eq!(simulate_panel(&cfg).unwrap(), simulate_panel(&cfg).unwrap());
        let other = SimConfig::identity(3, 20, 12);
        assert_ne!(simulate_panel(&cfg).unwrap(), simulate_panel(&other).unwrap());
    }

    #[test]
    fn times_partition_the_draw() {
        let cfg = SimConfig {
            n_per_asset: vec![5, 9, 2],
            ..SimConfig::identity(3, 0, 5)
        };
        let panel = simulate_panel(&cfg).unwrap();
        let mut seen = HashSet::new();
        let mut total = 0;
        for (s, &n) in panel.series().iter().zip(&cfg.n_per_asset) {
            assert_eq!(s.len(), n + 1);
            assert_eq!(s.times()[0], 0.0);
            assert_eq!(s.log_prices()[0], 0.0);
            for t in &s.times()[1..] {
                assert!(seen.insert(t.to_bits()), "time {t} assigned twice");
                assert!(*t > 0.0 && *t <= 1.0);
                total += 1;
            }
        }
        assert_eq!(total, 16);
    }

    #[test]
    fn increments_have_unit_variance_per_time() {
        // pooled normalized increments over many panels
        let mut z = Vec::new();
        for seed in 0..2500 {
            let panel = simulate_panel(&SimConfig::identity(1, 4, seed)).unwrap();
            for r in panel.series()[0].log_returns() {
                z.push(r.increment / r.len().sqrt());
            }
        }
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(n >= 1e4);
        assert!(mean.abs() <= 3.0 / n.sqrt(), "mean {mean}");
        // Var of the sample variance of N(0,1) draws is 2/(n-1)
        assert!((var - 1.0).abs() <= 3.0 * (2.0 / (n - 1.0)).sqrt(), "var {var}");
    }

    #[test]
    fn psd_root_squares_back() {
        let sigma = planted_factor(4, 0.2, 0.8);
        let root = psd_sqrt(&sigma).unwrap();
        assert!((&root * &root - &sigma).amax() <= 1e-12);
        let mut bad = DMatrix::identity(2, 2);
        bad[(0, 1)] = 2.0;
        bad[(1, 0)] = 2.0;
        assert!(matches!(psd_sqrt(&bad), Err(Error::Config(_))));
        let mut asym = DMatrix::identity(2, 2);
        asym[(0, 1)] = 0.1;
        assert!(psd_sqrt(&asym).is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(SimConfig::identity(0, 5, 1).validate().is_err());
        assert!(SimConfig::identity(2, 1, 1).validate().is_err());
        let mut cfg = SimConfig::identity(2, 5, 1);
        cfg.horizon = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = SimConfig::identity(2, 5, 1).with_sigma(DMatrix::identity(3, 3));
        assert!(simulate_panel(&cfg).is_err());
    }

    #[test]
    fn proxy_of_scaled_identity() {
        let p = 10;
        let cfg = SimConfig::identity(p, 5, 3)
            .with_sigma(DMatrix::identity(p, p) * 4.0)
            .with_proxy_grid(10_000);
        let proxy = proxy_icv(&cfg).unwrap();
        assert_eq!(proxy.kind(), EstimatorKind::ProxyIcv);
        // each diagonal entry is 4·χ²_m/m, sd 4·sqrt(2/m)
        let sd = 4.0 * (2.0 / 10_000f64).sqrt() * (p as f64).sqrt();
        assert!((proxy.trace() - 4.0 * p as f64).abs() <= 4.0 * sd);
    }

    #[test]
    fn proxy_identity_spectrum_is_near_one() {
        let cfg = SimConfig::identity(30, 5, 9).with_proxy_grid(10_000);
        let proxy = proxy_icv(&cfg).unwrap();
        let es = eigen_sym(proxy.matrix()).unwrap();
        let ks = ks_distance(
            &esd(es.values()).unwrap(),
            &crate::SpectralMeasure::point_mass(1.0),
        );
        // the eigenvalues all lie within ~0.1 of 1 but sit on both sides of it
        assert!(ks <= 0.7);
        assert!(es.values().iter().all(|l| (l - 1.0).abs() < 0.15));
    }

    #[test]
    fn proxy_single_asset_is_realized_variance() {
        let cfg = SimConfig::identity(1, 5, 4).with_proxy_grid(100);
        let proxy = proxy_icv(&cfg).unwrap();
        let mut rng = stream_rng(4, 1);
        let rv: f64 = (0..100)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (z * 0.1).powi(2)
            })
            .sum();
        assert!((proxy.get(0, 0) - rv).abs() <= 1e-15 * rv.max(1.0));
    }

    #[test]
    fn small_study_is_deterministic() {
        let cfg = StudyConfig {
            lsd_steps: 400,
            ..StudyConfig::new(SimConfig::identity(5, 40, 1).with_proxy_grid(200), 3)
        };
        let a = replicate_study(&cfg).unwrap();
        let b = replicate_study(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.per_rep_ks.len(), 3);
        assert!(a.mean_ks.vs_proxy.is_some());
        assert!(a.per_rep_ks.iter().all(|k| (0.0..=1.0).contains(&k.vs_lsd)));
    }

    #[test]
    fn quantile_width() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert!((inter_quantile_width(&v, 0.05, 0.95) - 90.0).abs() < 1e-12);
    }
}

//! Eigen-decomposition of symmetric matrices and spectral distributions.
//!
//! The eigensolver is a cyclic Jacobi sweep: every off-diagonal element is
//! rotated away in turn until the off-diagonal Frobenius norm drops below
//! `1e-12 * ||A||_F`. Eigenvalues come out descending and every eigenvector
//! is signed so its largest-magnitude component is positive.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::check_symmetric;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues (descending) and orthonormal eigenvectors (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k).iter().copied().collect()
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V diag(values) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.values));
        &self.vectors * lambda * self.vectors.transpose()
    }
}

/// Full spectral decomposition of a symmetric matrix.
pub fn eigen_sym(a: &DMatrix<f64>) -> Result<EigenSystem> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::Validation(format!(
            "eigen_sym needs a nonempty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("matrix has non-finite entries".into()));
    }
    let scale = a.amax();
    check_symmetric(a, 1e-12 * scale)?;

    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let norm = m.norm();
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&m) <= JACOBI_TOL * norm {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&m) > JACOBI_TOL * norm {
        return Err(Error::NonConvergence {
            iters: JACOBI_MAX_SWEEPS,
            residual: off_diagonal_norm(&m),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).clone_owned();
        let lead = col.iamax();
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok(EigenSystem { values, vectors })
}

fn off_diagonal_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += m[(i, j)] * m[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// One Jacobi rotation annihilating `m[(p, q)]`; accumulates into `v`.
fn rotate(m: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize) {
    let apq = m[(p, q)];
    if apq == 0.0 {
        return;
    }
    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = m.nrows();
    for k in 0..n {
        let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
        m[(k, p)] = c * mkp - s * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
        m[(p, k)] = c * mpk - s * mqk;
        m[(q, k)] = s * mpk + c * mqk;
    }
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for k in 0..n {
        let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Discrete probability measure on the real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl SpectralMeasure {
    /// Sorts the atoms, merges exact duplicates and checks that the weights
    /// are nonnegative and sum to one within `1e-12`.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::Validation(format!(
                "measure needs matching nonempty atoms and weights ({} vs {})",
                atoms.len(),
                weights.len()
            )));
        }
        if atoms.iter().chain(&weights).any(|v| !v.is_finite()) {
            return Err(Error::Validation("measure has non-finite atoms or weights".into()));
        }
        if let Some(w) = weights.iter().find(|w| **w < 0.0) {
            return Err(Error::Validation(format!("negative weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("weights sum to {total}, not 1")));
        }
        let mut pairs: Vec<(f64, f64)> = atoms.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, w) in pairs {
            match atoms.last() {
                Some(&last) if last == x => *weights.last_mut().unwrap() += w,
                _ => {
                    atoms.push(x);
                    weights.push(w);
                }
            }
        }
        let cumulative = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            atoms,
            weights,
            cumulative,
        })
    }

    pub fn point_mass(x: f64) -> Self {
        Self::new(vec![x], vec![1.0]).expect("point mass is a valid measure")
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫ f dμ`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }

    pub fn moment(&self, k: i32) -> f64 {
        self.integrate(|x| x.powi(k))
    }

    /// Scales every atom by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.atoms.iter().map(|x| k * x).collect(), self.weights.clone())
    }

    /// Quantile: smallest atom with `F(x) >= q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let idx = self.cumulative.partition_point(|&c| c < q - 1e-15);
        self.atoms[idx.min(self.atoms.len() - 1)]
    }
}

/// A cumulative distribution function with finitely many breakpoints.
pub trait Cdf {
    /// `F(x)`, right-continuous.
    fn cdf(&self, x: f64) -> f64;
    /// `F(x-)`.
    fn cdf_left(&self, x: f64) -> f64;
    /// Points where `F` may jump or change slope.
    fn breakpoints(&self) -> Vec<f64>;
}

impl Cdf for SpectralMeasure {
    fn cdf(&self, x: f64) -> f64 {
        let k = self.atoms.partition_point(|&a| a <= x);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1].min(1.0)
        }
    }

    fn cdf_left(&self, x: f64) -> f64 {
        let k = self.atoms.partition_point(|&a| a < x);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1].min(1.0)
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.atoms.clone()
    }
}

/// CDF sampled on an ascending grid, linear in between, 0 below the grid
/// and 1 above it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCdf {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
}

impl GridCdf {
    pub fn new(x: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != f.len() {
            return Err(Error::Validation("grid cdf needs matching nonempty x and F".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("grid cdf x must be strictly increasing".into()));
        }
        Ok(Self { x, f })
    }

    fn interior(&self, x: f64) -> f64 {
        let k = self.x.partition_point(|&g| g <= x);
        if k >= self.x.len() {
            return self.f[self.f.len() - 1];
        }
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        let (f0, f1) = (self.f[k - 1], self.f[k]);
        f0 + (f1 - f0) * (x - x0) / (x1 - x0)
    }
}

impl Cdf for GridCdf {
    fn cdf(&self, x: f64) -> f64 {
        if x < self.x[0] {
            0.0
        } else if x > self.x[self.x.len() - 1] {
            1.0
        } else {
            self.interior(x)
        }
    }

    fn cdf_left(&self, x: f64) -> f64 {
        if x <= self.x[0] {
            0.0
        } else if x > self.x[self.x.len() - 1] {
            1.0
        } else {
            self.interior(x)
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.x.clone()
    }
}

/// Empirical spectral distribution: mass `1/p` at each eigenvalue.
pub fn esd(eigs: &[f64]) -> Result<SpectralMeasure> {
    if eigs.is_empty() {
        return Err(Error::Validation("esd of an empty spectrum".into()));
    }
    let w = 1.0 / eigs.len() as f64;
    let mut weights = vec![w; eigs.len()];
    // absorb the rounding of p * (1/p) into the last weight
    let drift = 1.0 - weights.iter().sum::<f64>();
    *weights.last_mut().unwrap() += drift;
    SpectralMeasure::new(eigs.to_vec(), weights)
}

/// `s(z) = sum_j w_j / (λ_j - z)` for `Im z > 0`.
pub fn stieltjes_of_measure(m: &SpectralMeasure, z: Complex64) -> Result<Complex64> {
    if z.im <= 0.0 {
        return Err(Error::Domain(format!("Stieltjes transform needs Im z > 0, got {z}")));
    }
    Ok(m
        .atoms
        .iter()
        .zip(&m.weights)
        .map(|(l, w)| *w / (Complex64::new(*l, 0.0) - z))
        .sum())
}

/// Density samples `max(Im s(x + iε) / π, 0)` along `x_grid`.
pub fn stieltjes_invert(s: impl Fn(Complex64) -> Complex64, x_grid: &[f64], eps: f64) -> Vec<f64> {
    x_grid
        .iter()
        .map(|&x| (s(Complex64::new(x, eps)).im / std::f64::consts::PI).max(0.0))
        .collect()
}

/// Trapezoid rule over an ascending grid.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Running trapezoid integral, starting at 0.
pub fn cumulative_trapezoid(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    if !x.is_empty() {
        out.push(0.0);
    }
    for (xs, ys) in x.windows(2).zip(y.windows(2)) {
        acc += 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]);
        out.push(acc);
    }
    out
}

/// Kolmogorov-Smirnov distance `sup_x |F(x) - G(x)|`.
///
/// Both functions are piecewise linear or constant between the union of
/// their breakpoints, so the supremum is attained at a breakpoint, either at
/// the value or at the left limit.
pub fn ks_distance(a: &dyn Cdf, b: &dyn Cdf) -> f64 {
    let mut points = a.breakpoints();
    points.extend(b.breakpoints());
    points
        .iter()
        .map(|&x| {
            let right = (a.cdf(x) - b.cdf(x)).abs();
            let left = (a.cdf_left(x) - b.cdf_left(x)).abs();
            right.max(left)
        })
        .fold(0.0, f64::max)
        .min(1.0)
}

/// Scree data for plotting plus the leading eigenvectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeModes {
    pub scree: Vec<f64>,
    pub top_vectors: Vec<Vec<f64>>,
    /// `λ_1 / λ_2`; absent when `p = 1` or `λ_2 = 0`.
    pub gap_ratio: Option<f64>,
}

pub fn scree_and_modes(es: &EigenSystem, k: usize) -> Result<ScreeModes> {
    if k > es.dim() {
        return Err(Error::Validation(format!(
            "asked for {k} eigenvectors of a {}-dimensional system",
            es.dim()
        )));
    }
    let gap_ratio = match es.values() {
        [l1, l2, ..] if *l2 != 0.0 => Some(l1 / l2),
        _ => None,
    };
    Ok(ScreeModes {
        scree: es.values().to_vec(),
        top_vectors: (0..k).map(|i| es.vector(i)).collect(),
        gap_ratio,
    })
}

/// On-disk spectrum summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumJson {
    pub eigenvalues: Vec<f64>,
    pub esd_cdf: Vec<[f64; 2]>,
    pub top_vectors: Vec<Vec<f64>>,
    pub gap_ratio: Option<f64>,
    #[serde(default)]
    pub trace: f64,
    #[serde(default)]
    pub negative_eigenvalues: usize,
}

impl SpectrumJson {
    pub fn build(es: &EigenSystem, top_k: usize, trace: f64) -> Result<Self> {
        let measure = esd(es.values())?;
        let modes = scree_and_modes(es, top_k)?;
        Ok(Self {
            eigenvalues: modes.scree,
            esd_cdf: measure.atoms().iter().map(|&x| [x, measure.cdf(x)]).collect(),
            top_vectors: modes.top_vectors,
            gap_ratio: modes.gap_ratio,
            trace,
            negative_eigenvalues: es.values().iter().filter(|v| **v < 0.0).count(),
        })
    }

    pub fn measure(&self) -> Result<SpectralMeasure> {
        esd(&self.eigenvalues)
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

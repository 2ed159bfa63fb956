//! Integrated covariance estimators.
//!
//! - Realized covariance ([`rcv`]) on the refresh-time grid.
//! - Hayashi-Yoshida ([`hy_pair_oracle`], [`hy_pair_sweep`], [`hy_matrix`]):
//!   sum of `dx_k * dy_l` over every pair of overlapping inter-arrival
//!   intervals, computed on the raw ticks.
//! - Scaled realized covariance ([`srcv_pair`], [`srcv_matrix`]): pairwise
//!   synchronized returns weighted by `psi_i`.
//!
//! Every matrix entry `(i, j)` is computed once and mirrored, so outputs are
//! exactly symmetric. Entry sums run in a fixed order, which keeps results
//! identical whatever the pair scheduling.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::sync::{pairwise_sync_a0, refresh_times_of, Interval, RefreshGrid, SyncPairs};
use crate::tickdata::{LogReturn, TickPanel, TickSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EstimatorKind {
    Rcv,
    Hy,
    Srcv,
    ProxyIcv,
    /// A matrix supplied from outside the estimators (e.g. a model input).
    External,
}

/// Symmetric `p x p` covariance estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    kind: EstimatorKind,
    asset_ids: Vec<String>,
    matrix: DMatrix<f64>,
    /// Number of summed terms per entry (returns for RCV/SRCV, overlapping
    /// interval pairs for HY).
    sample_counts: Option<DMatrix<usize>>,
    /// SRCV entries that fell back to the HY value.
    fallback_pairs: Vec<(usize, usize)>,
}

impl CovMatrix {
    /// Wraps a matrix after checking it is square, finite, exactly symmetric
    /// and has a nonnegative diagonal.
    pub fn new(kind: EstimatorKind, asset_ids: Vec<String>, matrix: DMatrix<f64>) -> Result<Self> {
        let p = matrix.nrows();
        if p == 0 || matrix.ncols() != p {
            return Err(Error::Validation(format!(
                "covariance must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if asset_ids.len() != p {
            return Err(Error::Validation(format!(
                "{} asset ids for a {p}x{p} matrix",
                asset_ids.len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("covariance has non-finite entries".into()));
        }
        check_symmetric(&matrix, 0.0)?;
        if let Some(i) = (0..p).find(|&i| matrix[(i, i)] < 0.0) {
            return Err(Error::Validation(format!(
                "negative variance {} at diagonal {i}",
                matrix[(i, i)]
            )));
        }
        Ok(Self {
            kind,
            asset_ids,
            matrix,
            sample_counts: None,
            fallback_pairs: Vec::new(),
        })
    }

    fn with_counts(mut self, counts: DMatrix<usize>) -> Self {
        self.sample_counts = Some(counts);
        self
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn sample_counts(&self) -> Option<&DMatrix<usize>> {
        self.sample_counts.as_ref()
    }

    pub fn fallback_pairs(&self) -> &[(usize, usize)] {
        &self.fallback_pairs
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn to_json(&self) -> MatrixJson {
        MatrixJson {
            kind: self.kind,
            p: self.p(),
            asset_ids: self.asset_ids.clone(),
            rows: self.matrix.row_iter().map(|r| r.iter().copied().collect()).collect(),
            sample_counts: self
                .sample_counts
                .as_ref()
                .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect()),
            fallback_pairs: self.fallback_pairs.clone(),
        }
    }

    pub fn from_json(json: MatrixJson) -> Result<Self> {
        let p = json.rows.len();
        if json.p != p || json.rows.iter().any(|r| r.len() != p) {
            return Err(Error::Validation(format!(
                "matrix json declares p = {} but rows are not {p}x{p}",
                json.p
            )));
        }
        let matrix = DMatrix::from_fn(p, p, |i, j| json.rows[i][j]);
        let mut cov = Self::new(json.kind, json.asset_ids, matrix)?;
        cov.fallback_pairs = json.fallback_pairs;
        if let Some(c) = json.sample_counts {
            if c.len() == p && c.iter().all(|r| r.len() == p) {
                cov.sample_counts = Some(DMatrix::from_fn(p, p, |i, j| c[i][j]));
            }
        }
        Ok(cov)
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        Self::from_json(serde_json::from_reader(reader)?)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_json(std::io::BufReader::new(file))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &self.to_json())?;
        writeln!(w).map_err(|e| Error::io(path, e))
    }

    /// Square CSV with the asset ids as header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.asset_ids.join(","))?;
        for row in self.matrix.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// On-disk form of a [`CovMatrix`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub kind: EstimatorKind,
    pub p: usize,
    pub asset_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_counts: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallback_pairs: Vec<(usize, usize)>,
}

/// Fails with the first `(i, j)` whose asymmetry exceeds `tol`.
pub fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > tol || gap.is_nan() {
                return Err(Error::NotSymmetric { row: i, col: j, gap });
            }
        }
    }
    Ok(())
}

/// Realized covariance on the refresh-time grid: `sum_l dX_l dX_l^T` over the
/// synchronized return vectors, the first return starting at the open.
pub fn rcv(panel: &TickPanel, grid: &RefreshGrid) -> Result<CovMatrix> {
    if grid.is_empty() {
        return Err(Error::InsufficientData(
            "realized covariance needs at least one refresh time after the open".into(),
        ));
    }
    let returns: Vec<Vec<f64>> = panel
        .series()
        .iter()
        .enumerate()
        .map(|(a, s)| {
            let x = s.log_prices();
            grid.kept_indices(a).windows(2).map(|w| x[w[1]] - x[w[0]]).collect()
        })
        .collect();
    let n = grid.len();
    let values = assemble(panel.p(), |i, j| {
        let s = returns[i].iter().zip(&returns[j]).fold(0.0, |acc, (a, b)| acc + a * b);
        (s, n)
    });
    finish(EstimatorKind::Rcv, panel, values)
}

/// Hayashi-Yoshida covariance by the full double loop over all return pairs.
pub fn hy_pair_oracle(x: &TickSeries, y: &TickSeries) -> f64 {
    let (rx, ry) = (x.log_returns(), y.log_returns());
    let mut sum = 0.0;
    for a in &rx {
        for b in &ry {
            if interval(a).overlaps(&interval(b)) {
                sum += a.increment * b.increment;
            }
        }
    }
    sum
}

/// Hayashi-Yoshida covariance by a single forward sweep.
///
/// Overlapping interval pairs form a monotone staircase, so advancing
/// whichever interval ends first visits them in the same `(k, l)` order as
/// [`hy_pair_oracle`] and produces a bitwise-identical sum in `O(n_x + n_y)`.
pub fn hy_pair_sweep(x: &TickSeries, y: &TickSeries) -> f64 {
    hy_sweep(&x.log_returns(), &y.log_returns()).0
}

fn hy_sweep(rx: &[LogReturn], ry: &[LogReturn]) -> (f64, usize) {
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    let mut terms = 0;
    while i < rx.len() && j < ry.len() {
        let (a, b) = (&rx[i], &ry[j]);
        if interval(a).overlaps(&interval(b)) {
            sum += a.increment * b.increment;
            terms += 1;
        }
        if a.end < b.end {
            i += 1;
        } else if b.end < a.end {
            j += 1;
        } else {
            i += 1;
            j += 1;
        }
    }
    (sum, terms)
}

fn interval(r: &LogReturn) -> Interval {
    Interval::new(r.start, r.end)
}

/// Full Hayashi-Yoshida matrix; entry `(i, j)` is the pairwise sweep on raw
/// ticks and the diagonal is each asset's realized variance.
pub fn hy_matrix(panel: &TickPanel) -> Result<CovMatrix> {
    let returns: Vec<Vec<LogReturn>> = panel.series().iter().map(|s| s.log_returns()).collect();
    let values = assemble(panel.p(), |i, j| hy_sweep(&returns[i], &returns[j]));
    finish(EstimatorKind::Hy, panel, values)
}

/// Hayashi-Yoshida on the raw ticks and on the ticks kept by refresh-time
/// sampling of the pair.
pub fn hy_refresh_reduction_check(x: &TickSeries, y: &TickSeries) -> Result<(f64, f64)> {
    let grid = refresh_times_of(&[x, y])?;
    let xr = x.subset(&grid.kept_indices(0))?;
    let yr = y.subset(&grid.kept_indices(1))?;
    Ok((hy_pair_sweep(x, y), hy_pair_sweep(&xr, &yr)))
}

/// Scaled realized covariance `sum_i psi_i dX_i dY_i` of a synchronized pair set.
pub fn srcv_pair(pairs: &SyncPairs) -> f64 {
    pairs
        .returns()
        .iter()
        .fold(0.0, |acc, r| acc + r.psi * (r.dx * r.dy))
}

/// Pairwise SRCV matrix.
///
/// A pair whose synchronization yields fewer than two returns gets its HY
/// value instead and is listed in [`CovMatrix::fallback_pairs`].
pub fn srcv_matrix(panel: &TickPanel) -> Result<CovMatrix> {
    let series = panel.series();
    let p = panel.p();
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| (i..p).map(move |j| (i, j))).collect();
    let entries: Vec<(f64, usize, bool)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (x, y) = (&series[i], &series[j]);
            match pairwise_sync_a0(x, y) {
                Ok(sync) if sync.returns().len() >= 2 => (srcv_pair(&sync), sync.returns().len(), false),
                _ => {
                    let (v, n) = hy_sweep(&x.log_returns(), &y.log_returns());
                    (v, n, true)
                }
            }
        })
        .collect();
    let mut m = DMatrix::zeros(p, p);
    let mut counts = DMatrix::zeros(p, p);
    let mut fallback = Vec::new();
    for (&(i, j), &(v, n, fell_back)) in pairs.iter().zip(&entries) {
        m[(i, j)] = v;
        m[(j, i)] = v;
        counts[(i, j)] = n;
        counts[(j, i)] = n;
        if fell_back && i != j {
            fallback.push((i, j));
        }
    }
    let mut cov = CovMatrix::new(EstimatorKind::Srcv, panel.asset_ids(), m)?.with_counts(counts);
    cov.fallback_pairs = fallback;
    Ok(cov)
}

/// Computes the upper triangle in parallel and mirrors it.
fn assemble<F>(p: usize, entry: F) -> (DMatrix<f64>, DMatrix<usize>)
where
    F: Fn(usize, usize) -> (f64, usize) + Sync,
{
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| (i..p).map(move |j| (i, j))).collect();
    let values: Vec<(f64, usize)> = pairs.par_iter().map(|&(i, j)| entry(i, j)).collect();
    let mut m = DMatrix::zeros(p, p);
    let mut counts = DMatrix::zeros(p, p);
    for (&(i, j), &(v, n)) in pairs.iter().zip(&values) {
        m[(i, j)] = v;
        m[(j, i)] = v;
        counts[(i, j)] = n;
        counts[(j, i)] = n;
    }
    (m, counts)
}

fn finish(
    kind: EstimatorKind,
    panel: &TickPanel,
    (m, counts): (DMatrix<f64>, DMatrix<usize>),
) -> Result<CovMatrix> {
    Ok(CovMatrix::new(kind, panel.asset_ids(), m)?.with_counts(counts))
}

//! Synchronization of asynchronous tick series.
//!
//! Two flavours are provided:
//!
//! - [`refresh_times`] builds a common refresh-time grid for a whole panel:
//!   each refresh time is the instant by which every asset has traded at
//!   least once since the previous refresh time, and each asset is sampled at
//!   its last tick at or before it.
//! - [`pairwise_sync_a0`] produces the same pairs for two assets but keeps
//!   each asset's true arrival time, so every synchronized return carries its
//!   own pair of intervals. From those intervals we derive the overlap `L_i`,
//!   the configuration of the two intervals, and the weight
//!   `psi_i = sqrt(|I_x| |I_y|) / L_i` used by the scaled realized covariance.
//!
//! Both start from the open (time 0), where every asset is observed.
//!
//! Intervals are open: two intervals that only share an endpoint do not
//! overlap.

use crate::error::{Error, Result};
use crate::tickdata::{TickPanel, TickSeries};

/// Common refresh-time grid of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct RefreshGrid {
    refresh_times: Vec<f64>,
    /// `indices[asset][j]`: last observation of `asset` at or before
    /// `refresh_times[j]`.
    indices: Vec<Vec<usize>>,
}

impl RefreshGrid {
    /// Refresh times, excluding the open.
    pub fn refresh_times(&self) -> &[f64] {
        &self.refresh_times
    }

    pub fn len(&self) -> usize {
        self.refresh_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refresh_times.is_empty()
    }

    /// Per-refresh-time observation indices of one asset, excluding the open.
    pub fn indices(&self, asset: usize) -> &[usize] {
        &self.indices[asset]
    }

    /// Indices kept by refresh-time sampling for one asset: the open followed
    /// by the mapped observation at each refresh time.
    pub fn kept_indices(&self, asset: usize) -> Vec<usize> {
        std::iter::once(0).chain(self.indices[asset].iter().copied()).collect()
    }
}

/// Refresh-time grid of a whole panel.
pub fn refresh_times(panel: &TickPanel) -> Result<RefreshGrid> {
    let refs: Vec<&TickSeries> = panel.series().iter().collect();
    refresh_times_of(&refs)
}

/// Refresh-time grid of an arbitrary set of series.
///
/// Starting from `t = 0`, the next refresh time is the maximum over assets of
/// each asset's first observation strictly after `t`. Sampling stops as soon
/// as some asset has no further observation.
pub fn refresh_times_of(series: &[&TickSeries]) -> Result<RefreshGrid> {
    if series.is_empty() {
        return Err(Error::Validation("refresh time needs at least one series".into()));
    }
    let mut next: Vec<usize> = vec![1; series.len()];
    let mut refresh = Vec::new();
    let mut indices = vec![Vec::new(); series.len()];
    while series.iter().zip(&next).all(|(s, &k)| k < s.len()) {
        let t = series
            .iter()
            .zip(&next)
            .map(|(s, &k)| s.times()[k])
            .fold(f64::NEG_INFINITY, f64::max);
        for (a, s) in series.iter().enumerate() {
            let times = s.times();
            let mut last = next[a];
            while last + 1 < times.len() && times[last + 1] <= t {
                last += 1;
            }
            indices[a].push(last);
            next[a] = last + 1;
        }
        refresh.push(t);
    }
    if refresh.is_empty() {
        let asset = series
            .iter()
            .find(|s| s.len() < 2)
            .map_or_else(String::new, |s| s.asset_id().to_string());
        return Err(Error::EmptyGrid { asset });
    }
    Ok(RefreshGrid {
        refresh_times: refresh,
        indices,
    })
}

/// Open time interval `(start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Open intervals intersect iff the later start precedes the earlier end.
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start.max(other.start) < self.end.min(other.end)
    }
}

/// Relative position of the `Y` return interval against the `X` one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntervalConfig {
    /// `a1 <= a2` and `b2 <= b1`.
    YWithinX,
    /// `a2 < a1` and `b2 <= b1`.
    YLeadsX,
    /// `a1 <= a2` and `b1 < b2`.
    YLagsX,
    /// `a2 < a1` and `b1 < b2`.
    XWithinY,
}

impl IntervalConfig {
    /// Configuration label 1..=4.
    pub fn number(self) -> u8 {
        match self {
            IntervalConfig::YWithinX => 1,
            IntervalConfig::YLeadsX => 2,
            IntervalConfig::YLagsX => 3,
            IntervalConfig::XWithinY => 4,
        }
    }
}

/// Classifies two overlapping return intervals.
pub fn classify_config(x: Interval, y: Interval) -> Result<IntervalConfig> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Domain(format!(
            "intervals must have positive length: x = ({}, {}), y = ({}, {})",
            x.start, x.end, y.start, y.end
        )));
    }
    if !x.overlaps(&y) {
        return Err(Error::Domain(format!(
            "intervals ({}, {}) and ({}, {}) do not overlap",
            x.start, x.end, y.start, y.end
        )));
    }
    let y_starts_inside = x.start <= y.start;
    let y_ends_inside = y.end <= x.end;
    Ok(match (y_starts_inside, y_ends_inside) {
        (true, true) => IntervalConfig::YWithinX,
        (false, true) => IntervalConfig::YLeadsX,
        (true, false) => IntervalConfig::YLagsX,
        (false, false) => IntervalConfig::XWithinY,
    })
}

/// Length of the intersection of two intervals.
pub fn overlap_length(x: Interval, y: Interval) -> f64 {
    x.end.min(y.end) - x.start.max(y.start)
}

/// One synchronized observation pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncEntry {
    pub x_index: usize,
    pub y_index: usize,
    pub x_time: f64,
    pub y_time: f64,
    pub x_log_price: f64,
    pub y_log_price: f64,
}

/// Bivariate return between two consecutive synchronized pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairReturn {
    pub x_interval: Interval,
    pub y_interval: Interval,
    pub dx: f64,
    pub dy: f64,
    pub config: IntervalConfig,
    /// Overlap `L_i` of the two intervals.
    pub overlap: f64,
    /// `sqrt(|I_x| |I_y|) / L_i`.
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncPairs {
    entries: Vec<SyncEntry>,
    returns: Vec<PairReturn>,
}

impl SyncPairs {
    /// Builds the pair set and its per-return fields. Both time sequences
    /// must be strictly increasing and every pair of consecutive return
    /// intervals must overlap.
    pub fn from_entries(entries: Vec<SyncEntry>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 synchronized pairs, got {}",
                entries.len()
            )));
        }
        let mut returns = Vec::with_capacity(entries.len() - 1);
        for (i, w) in entries.windows(2).enumerate() {
            let (prev, cur) = (w[0], w[1]);
            if cur.x_time <= prev.x_time || cur.y_time <= prev.y_time {
                return Err(Error::Validation(format!(
                    "synchronized times not strictly increasing at pair {}",
                    i + 1
                )));
            }
            let x_interval = Interval::new(prev.x_time, cur.x_time);
            let y_interval = Interval::new(prev.y_time, cur.y_time);
            let config = classify_config(x_interval, y_interval)?;
            let overlap = overlap_length(x_interval, y_interval);
            returns.push(PairReturn {
                x_interval,
                y_interval,
                dx: cur.x_log_price - prev.x_log_price,
                dy: cur.y_log_price - prev.y_log_price,
                config,
                overlap,
                psi: (x_interval.len() * y_interval.len()).sqrt() / overlap,
            });
        }
        Ok(Self { entries, returns })
    }

    pub fn entries(&self) -> &[SyncEntry] {
        &self.entries
    }

    pub fn returns(&self) -> &[PairReturn] {
        &self.returns
    }

    /// `(x_time, y_time)` of every pair, including the open.
    pub fn times(&self) -> Vec<(f64, f64)> {
        self.entries.iter().map(|e| (e.x_time, e.y_time)).collect()
    }
}

/// Pairwise synchronization that keeps the true arrival times.
///
/// Starting after the open, compare the next unconsumed tick of each asset.
/// The later of the two closes the pair; the other asset contributes its last
/// tick at or before that instant. Both cursors then move one tick past the
/// ticks just used.
pub fn pairwise_sync_a0(x: &TickSeries, y: &TickSeries) -> Result<SyncPairs> {
    let (tx, ty) = (x.times(), y.times());
    let (nx, ny) = (tx.len(), ty.len());
    let entry = |i: usize, j: usize| SyncEntry {
        x_index: i,
        y_index: j,
        x_time: tx[i],
        y_time: ty[j],
        x_log_price: x.log_prices()[i],
        y_log_price: y.log_prices()[j],
    };
    let mut entries = vec![entry(0, 0)];
    let (mut k1, mut k2) = (1, 1);
    while k1 < nx && k2 < ny {
        if ty[k2] > tx[k1] {
            let m = last_at_or_before(tx, k1, ty[k2]);
            entries.push(entry(m, k2));
            k1 = m;
        } else {
            let m = last_at_or_before(ty, k2, tx[k1]);
            entries.push(entry(k1, m));
            k2 = m;
        }
        k1 += 1;
        k2 += 1;
    }
    if entries.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "assets {} and {} have no synchronized pair after the open",
            x.asset_id(),
            y.asset_id()
        )));
    }
    SyncPairs::from_entries(entries)
}

/// Largest index `j >= from` with `times[j] <= t`, given `times[from] <= t`.
fn last_at_or_before(times: &[f64], from: usize, t: f64) -> usize {
    let tail = &times[from..];
    from + tail.partition_point(|&s| s <= t) - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(id: &str, times: &[f64]) -> TickSeries {
        let prices = (0..times.len()).map(|i| i as f64 * 0.1).collect();
        TickSeries::new(id, times.to_vec(), prices).unwrap()
    }

    fn panel(series: Vec<TickSeries>) -> TickPanel {
        let d = series.iter().map(|s| s.last_time()).fold(0.0, f64::max);
        TickPanel::new(d, series).unwrap()
    }

    #[test]
    fn refresh_hand_enumeration() {
        let x = series("X", &[0.0, 1.0, 3.0, 5.0, 7.0, 9.0]);
        let y = series("Y", &[0.0, 2.0, 6.0, 10.0]);
        let grid = refresh_times(&panel(vec![x, y])).unwrap();
        assert_eq!(grid.refresh_times(), &[2.0, 6.0, 10.0]);
        assert_eq!(grid.indices(0), &[1, 3, 5]);
        assert_eq!(grid.indices(1), &[1, 2, 3]);
    }

    #[test]
    fn refresh_of_synchronous_panel_keeps_every_tick() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let grid = refresh_times(&panel(vec![series("A", &t), series("B", &t)])).unwrap();
        assert_eq!(grid.refresh_times(), &[1.0, 2.0, 3.0]);
        assert_eq!(grid.kept_indices(0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn refresh_single_time() {
        let grid =
            refresh_times(&panel(vec![series("X", &[0.0, 1.0]), series("Y", &[0.0, 0.5])])).unwrap();
        assert_eq!(grid.refresh_times(), &[1.0]);
    }

    #[test]
    fn a0_hand_enumeration() {
        let x = series("X", &[0.0, 1.0, 3.0, 5.0, 7.0, 9.0]);
        let y = series("Y", &[0.0, 2.0, 6.0, 10.0]);
        let pairs = pairwise_sync_a0(&x, &y).unwrap();
        assert_eq!(
            pairs.times(),
            vec![(0.0, 0.0), (1.0, 2.0), (5.0, 6.0), (9.0, 10.0)]
        );
    }

    #[test]
    fn a0_self_pairing() {
        let x = series("X", &[0.0, 0.5, 1.5, 2.0]);
        let pairs = pairwise_sync_a0(&x, &x).unwrap();
        assert_eq!(pairs.returns().len(), 3);
        for r in pairs.returns() {
            assert_eq!(r.overlap, r.x_interval.len());
            assert_eq!(r.overlap, r.y_interval.len());
            assert_eq!(r.psi, 1.0);
            assert_eq!(r.config, IntervalConfig::YWithinX);
        }
    }

    #[test]
    fn a0_single_return() {
        let x = series("X", &[0.0, 4.0]);
        let y = series("Y", &[0.0, 1.0, 3.0]);
        let pairs = pairwise_sync_a0(&x, &y).unwrap();
        assert_eq!(pairs.times(), vec![(0.0, 0.0), (4.0, 3.0)]);
        let r = pairs.returns()[0];
        assert_eq!(r.x_interval, Interval::new(0.0, 4.0));
        assert_eq!(r.y_interval, Interval::new(0.0, 3.0));
        assert_eq!(r.overlap, 3.0);
    }

    #[test]
    fn a0_tie_across_assets() {
        let x = series("X", &[0.0, 1.0, 2.0]);
        let y = series("Y", &[0.0, 1.0, 1.5, 2.0]);
        let pairs = pairwise_sync_a0(&x, &y).unwrap();
        assert_eq!(pairs.times(), vec![(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
    }

    #[test]
    fn config_cases() {
        let c = |a1, b1, a2, b2| classify_config(Interval::new(a1, b1), Interval::new(a2, b2)).unwrap();
        assert_eq!(c(0.0, 4.0, 1.0, 3.0).number(), 1);
        assert_eq!(c(1.0, 5.0, 0.0, 3.0).number(), 2);
        assert_eq!(c(1.0, 5.0, 2.0, 6.0).number(), 3);
        assert_eq!(c(2.0, 3.0, 0.0, 4.0).number(), 4);
        assert_eq!(c(0.0, 2.0, 0.0, 2.0).number(), 1);
    }

    #[test]
    fn config_rejects_disjoint_and_touching() {
        assert!(classify_config(Interval::new(0.0, 1.0), Interval::new(1.0, 2.0)).is_err());
        assert!(classify_config(Interval::new(0.0, 1.0), Interval::new(2.0, 3.0)).is_err());
        assert!(classify_config(Interval::new(1.0, 1.0), Interval::new(0.0, 3.0)).is_err());
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap_length(Interval::new(0.0, 4.0), Interval::new(1.0, 3.0)), 2.0);
        assert_eq!(overlap_length(Interval::new(1.0, 5.0), Interval::new(2.0, 6.0)), 3.0);
        assert_eq!(overlap_length(Interval::new(0.0, 2.0), Interval::new(0.0, 2.0)), 2.0);
    }

    /// Overlap written case by case from the configuration labels.
    fn overlap_by_config(x: Interval, y: Interval, config: IntervalConfig) -> f64 {
        match config {
            IntervalConfig::YWithinX => y.end - y.start,
            IntervalConfig::YLeadsX => y.end - x.start,
            IntervalConfig::YLagsX => x.end - y.start,
            IntervalConfig::XWithinY => x.end - x.start,
        }
    }

    fn arb_times() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::btree_set(1u32..200, 1..25).prop_map(|set| {
            std::iter::once(0.0).chain(set.into_iter().map(|k| k as f64 / 16.0)).collect()
        })
    }

    proptest! {
        #[test]
        fn a0_matches_refresh(tx in arb_times(), ty in arb_times()) {
            let (x, y) = (series("X", &tx), series("Y", &ty));
            let pairs = pairwise_sync_a0(&x, &y).unwrap();
            let grid = refresh_times_of(&[&x, &y]).unwrap();
            let from_grid: Vec<(usize, usize)> = grid.kept_indices(0).into_iter()
                .zip(grid.kept_indices(1)).collect();
            let from_a0: Vec<(usize, usize)> = pairs.entries().iter()
                .map(|e| (e.x_index, e.y_index)).collect();
            prop_assert_eq!(from_a0, from_grid);
        }

        #[test]
        fn returns_are_consistent(tx in arb_times(), ty in arb_times()) {
            let pairs = pairwise_sync_a0(&series("X", &tx), &series("Y", &ty)).unwrap();
            for r in pairs.returns() {
                prop_assert_eq!(r.overlap, overlap_by_config(r.x_interval, r.y_interval, r.config));
                prop_assert!(r.overlap > 0.0);
                prop_assert!(r.overlap <= r.x_interval.len().min(r.y_interval.len()));
                prop_assert!(r.psi >= 1.0 - 1e-15);
                let same = r.x_interval == r.y_interval;
                prop_assert_eq!(same, (r.psi - 1.0).abs() <= 1e-15, "psi {} for {:?}", r.psi, r);
            }
        }

        #[test]
        fn refresh_is_permutation_invariant(ts in prop::collection::vec(arb_times(), 1..5)) {
            let all: Vec<TickSeries> = ts.iter().enumerate()
                .map(|(i, t)| series(&format!("S{i}"), t)).collect();
            let fwd: Vec<&TickSeries> = all.iter().collect();
            let rev: Vec<&TickSeries> = all.iter().rev().collect();
            let a = refresh_times_of(&fwd).unwrap();
            let b = refresh_times_of(&rev).unwrap();
            prop_assert_eq!(a.refresh_times(), b.refresh_times());
            for i in 0..all.len() {
                prop_assert_eq!(a.indices(i), b.indices(all.len() - 1 - i));
            }
        }

        #[test]
        fn refresh_grid_invariants(ts in prop::collection::vec(arb_times(), 1..5)) {
            let all: Vec<TickSeries> = ts.iter().enumerate()
                .map(|(i, t)| series(&format!("S{i}"), t)).collect();
            let refs: Vec<&TickSeries> = all.iter().collect();
            let grid = refresh_times_of(&refs).unwrap();
            prop_assert!(grid.refresh_times().windows(2).all(|w| w[0] < w[1]));
            for (a, s) in all.iter().enumerate() {
                for (j, &k) in grid.indices(a).iter().enumerate() {
                    let t = grid.refresh_times()[j];
                    prop_assert!(s.times()[k] <= t);
                    prop_assert!(k + 1 == s.len() || s.times()[k + 1] > t);
                }
            }
        }
    }
}

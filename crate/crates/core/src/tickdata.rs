//! Asynchronous tick observations.
//!
//! A [`TickSeries`] holds one asset's arrival times and log prices on
//! `[0, D]`. The first observation sits at the open, `t = 0`, and carries the
//! previous close. A [`TickPanel`] groups the series of `p` assets that share
//! the horizon `D`.
//!
//! Times are plain `f64` in whatever unit the caller chose (day fractions by
//! convention). No timestamp parsing happens here.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct TickSeries {
    asset_id: String,
    times: Vec<f64>,
    log_prices: Vec<f64>,
}

/// One increment of a log price over its inter-arrival interval `(start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogReturn {
    pub start: f64,
    pub end: f64,
    pub increment: f64,
}

impl LogReturn {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

impl TickSeries {
    /// Builds a validated series: times strictly increasing starting at 0,
    /// at least two observations, every value finite.
    pub fn new(asset_id: impl Into<String>, times: Vec<f64>, log_prices: Vec<f64>) -> Result<Self> {
        let asset_id = asset_id.into();
        if times.len() != log_prices.len() {
            return Err(Error::Validation(format!(
                "asset {asset_id}: {} times but {} prices",
                times.len(),
                log_prices.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::Validation(format!(
                "asset {asset_id}: need at least 2 observations, got {}",
                times.len()
            )));
        }
        if let Some(i) = times
            .iter()
            .chain(log_prices.iter())
            .position(|v| !v.is_finite())
        {
            return Err(Error::Validation(format!(
                "asset {asset_id}: non-finite value at position {}",
                i % times.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::Validation(format!(
                "asset {asset_id}: first observation at {} instead of the open (time 0)",
                times[0]
            )));
        }
        if let Some(w) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "asset {asset_id}: times not strictly increasing at index {} ({} then {})",
                w + 1,
                times[w],
                times[w + 1]
            )));
        }
        Ok(Self {
            asset_id,
            times,
            log_prices,
        })
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn log_prices(&self) -> &[f64] {
        &self.log_prices
    }

    /// Number of observations, including the open.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Consecutive log-price increments with their inter-arrival intervals.
    pub fn log_returns(&self) -> Vec<LogReturn> {
        self.times
            .windows(2)
            .zip(self.log_prices.windows(2))
            .map(|(t, x)| LogReturn {
                start: t[0],
                end: t[1],
                increment: x[1] - x[0],
            })
            .collect()
    }

    /// Keeps only the observations at `indices` (ascending, must include 0).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.asset_id.clone(),
            indices.iter().map(|&i| self.times[i]).collect(),
            indices.iter().map(|&i| self.log_prices[i]).collect(),
        )
    }

    /// Multiplies every log price by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            asset_id: self.asset_id.clone(),
            times: self.times.clone(),
            log_prices: self.log_prices.iter().map(|x| x * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickPanel {
    horizon: f64,
    series: Vec<TickSeries>,
}

impl TickPanel {
    pub fn new(horizon: f64, series: Vec<TickSeries>) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Validation(format!("horizon must be positive, got {horizon}")));
        }
        if series.is_empty() {
            return Err(Error::Validation("panel needs at least one asset".into()));
        }
        let mut seen = HashMap::new();
        for (i, s) in series.iter().enumerate() {
            if let Some(j) = seen.insert(s.asset_id.clone(), i) {
                return Err(Error::Validation(format!(
                    "asset id {} appears twice (series {j} and {i})",
                    s.asset_id
                )));
            }
            if s.last_time() > horizon {
                return Err(Error::Validation(format!(
                    "asset {}: observation at {} beyond horizon {horizon}",
                    s.asset_id,
                    s.last_time()
                )));
            }
        }
        Ok(Self { horizon, series })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn series(&self) -> &[TickSeries] {
        &self.series
    }

    pub fn p(&self) -> usize {
        self.series.len()
    }

    pub fn asset_ids(&self) -> Vec<String> {
        self.series.iter().map(|s| s.asset_id.clone()).collect()
    }

    /// True when every asset is observed at exactly the same instants.
    pub fn is_synchronous(&self) -> bool {
        let first = self.series[0].times();
        self.series.iter().all(|s| s.times() == first)
    }
}

/// How to interpret a tick CSV.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// The price column holds raw prices (`price`) to be logged, instead of
    /// log prices (`log_price`).
    pub prices_raw: bool,
    /// Prepend a time-0 observation carrying the first price when an asset
    /// has no observation at the open.
    pub prepend_open: bool,
    /// Panel horizon; inferred as the largest time when absent.
    pub horizon: Option<f64>,
}

/// Reads a tick CSV from disk. See [`read_ticks`].
pub fn load_ticks(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<TickPanel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ticks(file, opts)
}

/// Parses `asset_id,time,log_price` rows (or `asset_id,time,price` with
/// `prices_raw`). Rows may come in any order; each asset is sorted by time
/// and must then be strictly increasing. Assets keep their order of first
/// appearance.
pub fn read_ticks<R: Read>(reader: R, opts: &LoadOptions) -> Result<TickPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let price_col = if opts.prices_raw { "price" } else { "log_price" };
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}` in header `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        })
    };
    let (id_col, time_col, px_col) = (col("asset_id")?, col("time")?, col(price_col)?);

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, f64, u64)>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, what: &str| {
            record.get(i).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing {what}"),
            })
        };
        let number = |i: usize, what: &str| -> Result<f64> {
            let raw = field(i, what)?;
            raw.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("{what} `{raw}` is not a number"),
            })
        };
        let id = field(id_col, "asset_id")?.to_string();
        let time = number(time_col, "time")?;
        let mut price = number(px_col, price_col)?;
        if opts.prices_raw {
            if price <= 0.0 {
                return Err(Error::Parse {
                    line,
                    message: format!("raw price {price} must be positive"),
                });
            }
            price = price.ln();
        }
        if !time.is_finite() || !price.is_finite() {
            return Err(Error::Parse {
                line,
                message: "non-finite value".into(),
            });
        }
        rows.entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push((time, price, line));
    }
    if order.is_empty() {
        return Err(Error::Validation("tick file has no rows".into()));
    }

    let mut series = Vec::with_capacity(order.len());
    for id in order {
        let mut obs = rows.remove(&id).unwrap_or_default();
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Validation(format!(
                "asset {id}: duplicate time {} (lines {} and {})",
                w[0].0, w[0].2, w[1].2
            )));
        }
        if obs[0].0 < 0.0 {
            return Err(Error::Validation(format!("asset {id}: negative time {}", obs[0].0)));
        }
        if obs[0].0 != 0.0 {
            if !opts.prepend_open {
                return Err(Error::Validation(format!(
                    "asset {id}: no observation at the open (time 0); first is {}",
                    obs[0].0
                )));
            }
            obs.insert(0, (0.0, obs[0].1, 0));
        }
        let (times, prices) = obs.into_iter().map(|(t, x, _)| (t, x)).unzip();
        series.push(TickSeries::new(id, times, prices)?);
    }
    let horizon = match opts.horizon {
        Some(d) => d,
        None => series.iter().map(TickSeries::last_time).fold(0.0, f64::max),
    };
    TickPanel::new(horizon, series)
}

/// Writes a panel as `asset_id,time,log_price` with 17 significant digits.
pub fn write_ticks<W: Write>(panel: &TickPanel, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Validation(format!("csv write failed: {e}"));
    wtr.write_record(["asset_id", "time", "log_price"]).map_err(csv_err)?;
    for s in panel.series() {
        for (t, x) in s.times().iter().zip(s.log_prices()) {
            wtr.write_record([s.asset_id(), &fmt_f64(*t), &fmt_f64(*x)])
                .map_err(csv_err)?;
        }
    }
    wtr.flush().map_err(|e| Error::Validation(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn save_ticks(panel: &TickPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ticks(panel, std::io::BufWriter::new(file))
}

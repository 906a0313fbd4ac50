//! Query-level trace ingestion and aggregation into window and interval targets.
//!
//! Each query's metric mass is spread uniformly over `[arrival, arrival + duration)`
//! and summed per interval; window metrics are the sums of their intervals.
//! Operator statistics are aggregated per window only, attributed to the window
//! that contains the query's arrival.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvio::{self, Header};
use crate::error::{Error, Result};
use crate::feature::{FeatureSchema, PerformanceFeature};

/// How operator columns are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// Operator counts per query; windows sum them.
    #[default]
    Counts,
    /// Per-operator execution-time shares; windows take the duration-weighted mean.
    TimeShares,
}

impl std::str::FromStr for TraceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "counts" => Ok(TraceMode::Counts),
            "time_shares" => Ok(TraceMode::TimeShares),
            other => Err(Error::Config(format!("unknown trace mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query_id: String,
    /// Milliseconds since epoch.
    pub arrival_ts: i64,
    pub duration_ms: u64,
    pub metrics: Vec<f64>,
    pub operators: Vec<f64>,
}

impl QueryRecord {
    pub fn feature(&self) -> PerformanceFeature {
        PerformanceFeature::new(self.metrics.clone(), self.operators.clone())
    }

    pub fn end_ts(&self) -> i64 {
        self.arrival_ts + self.duration_ms as i64
    }
}

/// An ingested trace together with its column schema and operator mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub schema: FeatureSchema,
    pub mode: TraceMode,
    pub records: Vec<QueryRecord>,
}

const QUERY_ID: &str = "query_id";
const ARRIVAL_TS: &str = "arrival_ts";
const DURATION_MS: &str = "duration_ms";

pub fn ingest_trace(path: impl AsRef<Path>, schema: &FeatureSchema, mode: TraceMode) -> Result<Trace> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(std::io::BufReader::new(file), schema, mode)
}

pub fn read_trace<R: Read>(reader: R, schema: &FeatureSchema, mode: TraceMode) -> Result<Trace> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = Header::new(rdr.headers()?);
    let id_col = header.require(QUERY_ID)?;
    let arrival_col = header.require(ARRIVAL_TS)?;
    let duration_col = header.require(DURATION_MS)?;
    let metric_cols = schema
        .metrics
        .iter()
        .map(|m| header.require(m))
        .collect::<Result<Vec<_>>>()?;
    let operator_cols = schema
        .operators
        .iter()
        .map(|o| header.require(o))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let arrival_ts: i64 = csvio::parse(&rec, arrival_col, row, ARRIVAL_TS)?;
        let duration: i64 = csvio::parse(&rec, duration_col, row, DURATION_MS)?;
        if duration < 0 {
            return Err(Error::Validation {
                row,
                message: format!("negative duration_ms {duration}"),
            });
        }
        let metrics = metric_cols
            .iter()
            .zip(&schema.metrics)
            .map(|(&c, name)| csvio::parse_nonneg(&rec, c, row, name))
            .collect::<Result<Vec<_>>>()?;
        let operators = operator_cols
            .iter()
            .zip(&schema.operators)
            .map(|(&c, name)| csvio::parse_nonneg(&rec, c, row, name))
            .collect::<Result<Vec<_>>>()?;
        records.push(QueryRecord {
            query_id: csvio::field(&rec, id_col).to_string(),
            arrival_ts,
            duration_ms: duration as u64,
            metrics,
            operators,
        });
    }
    Ok(Trace {
        schema: schema.clone(),
        mode,
        records,
    })
}

impl Trace {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec![QUERY_ID, ARRIVAL_TS, DURATION_MS];
        header.extend(self.schema.names());
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.query_id.clone(),
                r.arrival_ts.to_string(),
                r.duration_ms.to_string(),
            ];
            row.extend(r.metrics.iter().chain(&r.operators).map(|v| csvio::fmt_f64(*v)));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<trace writer>", e))?;
        Ok(())
    }

    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Window and interval boundaries over a trace span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start_ts: i64,
    pub window_len_ms: u64,
    pub interval_len_ms: u64,
    pub n_windows: usize,
}

impl TimeGrid {
    pub fn new(start_ts: i64, window_len_ms: u64, interval_len_ms: u64, n_windows: usize) -> Result<Self> {
        if interval_len_ms == 0 || window_len_ms == 0 {
            return Err(Error::Config("window and interval lengths must be positive".into()));
        }
        if !window_len_ms.is_multiple_of(interval_len_ms) {
            return Err(Error::Config(format!(
                "window length {window_len_ms} ms is not a multiple of interval length {interval_len_ms} ms"
            )));
        }
        Ok(Self {
            start_ts,
            window_len_ms,
            interval_len_ms,
            n_windows,
        })
    }

    pub fn intervals_per_window(&self) -> usize {
        (self.window_len_ms / self.interval_len_ms) as usize
    }

    pub fn n_intervals(&self) -> usize {
        self.n_windows * self.intervals_per_window()
    }

    pub fn end_ts(&self) -> i64 {
        self.start_ts + (self.n_windows as u64 * self.window_len_ms) as i64
    }

    pub fn window_start(&self, window: usize) -> i64 {
        self.start_ts + (window as u64 * self.window_len_ms) as i64
    }

    pub fn interval_start(&self, global_interval: usize) -> i64 {
        self.start_ts + (global_interval as u64 * self.interval_len_ms) as i64
    }

    pub fn window_of(&self, ts: i64) -> Option<usize> {
        if ts < self.start_ts || ts >= self.end_ts() {
            return None;
        }
        Some(((ts - self.start_ts) as u64 / self.window_len_ms) as usize)
    }

    pub fn interval_of(&self, ts: i64) -> Option<usize> {
        if ts < self.start_ts || ts >= self.end_ts() {
            return None;
        }
        Some(((ts - self.start_ts) as u64 / self.interval_len_ms) as usize)
    }

    /// The sub-grid holding only `window`.
    pub fn single_window(&self, window: usize) -> TimeGrid {
        TimeGrid {
            start_ts: self.window_start(window),
            n_windows: 1,
            ..*self
        }
    }

    /// Spreads `mass` uniformly over `[arrival, arrival + duration)` and adds it to
    /// the per-interval sums in `out` (row-major, `n_intervals × mass.len()`).
    /// Returns the fraction of the mass that landed inside the grid.
    pub fn apportion(&self, arrival: i64, duration: u64, mass: &[f64], out: &mut [f64]) -> f64 {
        let dims = mass.len();
        let (lo, hi) = (self.start_ts, self.end_ts());
        if duration == 0 {
            return match self.interval_of(arrival) {
                Some(g) => {
                    for (o, m) in out[g * dims..(g + 1) * dims].iter_mut().zip(mass) {
                        *o += m;
                    }
                    1.0
                }
                None => 0.0,
            };
        }
        let end = arrival + duration as i64;
        let a = arrival.max(lo);
        let b = end.min(hi);
        if a >= b {
            return 0.0;
        }
        let len = self.interval_len_ms as i64;
        let first = ((a - lo) / len) as usize;
        let last = ((b - 1 - lo) / len) as usize;
        let d = duration as f64;
        let mut kept = 0.0;
        for g in first..=last {
            let s = lo + g as i64 * len;
            let overlap = (b.min(s + len) - a.max(s)) as f64;
            let share = overlap / d;
            kept += share;
            for (o, m) in out[g * dims..(g + 1) * dims].iter_mut().zip(mass) {
                *o += m * share;
            }
        }
        kept
    }
}

/// Windowing configuration for [`build_targets`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationSpec {
    pub window_len_ms: u64,
    pub interval_len_ms: u64,
    /// Explicit grid start and window count; derived from the records when `None`.
    pub span: Option<(i64, usize)>,
}

impl AggregationSpec {
    pub fn new(window_len_ms: u64, interval_len_ms: u64) -> Self {
        Self {
            window_len_ms,
            interval_len_ms,
            span: None,
        }
    }

    pub fn on_grid(grid: &TimeGrid) -> Self {
        Self {
            window_len_ms: grid.window_len_ms,
            interval_len_ms: grid.interval_len_ms,
            span: Some((grid.start_ts, grid.n_windows)),
        }
    }
}

impl Default for AggregationSpec {
    fn default() -> Self {
        Self::new(300_000, 30_000)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowTarget {
    pub window_index: usize,
    pub window_start_ts: i64,
    pub window_len_ms: u64,
    pub feature: PerformanceFeature,
    /// Queries with apportioned mass in this window.
    pub query_count: usize,
    /// Total duration of the queries arriving in this window (weights for time shares).
    pub busy_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTarget {
    pub window_index: usize,
    pub interval_index: usize,
    pub interval_start_ts: i64,
    pub interval_len_ms: u64,
    pub metrics: Vec<f64>,
}

/// Aggregated generation targets over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub schema: FeatureSchema,
    pub mode: TraceMode,
    pub grid: TimeGrid,
    pub windows: Vec<WindowTarget>,
    pub intervals: Vec<IntervalTarget>,
}

impl Targets {
    /// Intervals belonging to `window`, in order.
    pub fn window_intervals(&self, window: usize) -> &[IntervalTarget] {
        let per = self.grid.intervals_per_window();
        &self.intervals[window * per..(window + 1) * per]
    }
}

pub fn build_targets(trace: &Trace, spec: &AggregationSpec) -> Result<Targets> {
    let (start_ts, n_windows) = match spec.span {
        Some(span) => span,
        None => {
            if trace.records.is_empty() {
                return Err(Error::Config("cannot build targets from an empty trace".into()));
            }
            if spec.window_len_ms == 0 {
                return Err(Error::Config("window length must be positive".into()));
            }
            let start = trace.records.iter().map(|r| r.arrival_ts).min().unwrap();
            let last = trace.records.iter().map(|r| r.arrival_ts).max().unwrap();
            (start, ((last - start) as u64 / spec.window_len_ms) as usize + 1)
        }
    };
    let grid = TimeGrid::new(start_ts, spec.window_len_ms, spec.interval_len_ms, n_windows)?;
    let n_metrics = trace.schema.n_metrics();
    let n_ops = trace.schema.n_operators();
    let per = grid.intervals_per_window();

    let mut interval_sums = vec![0.0; grid.n_intervals() * n_metrics];
    let mut op_sums = vec![vec![0.0; n_ops]; n_windows];
    let mut op_weights = vec![0.0; n_windows];
    let mut arrivals = vec![0usize; n_windows];
    let mut busy = vec![0.0; n_windows];
    let mut query_count = vec![0usize; n_windows];
    let mut clipped = 0usize;

    for r in &trace.records {
        let kept = grid.apportion(r.arrival_ts, r.duration_ms, &r.metrics, &mut interval_sums);
        if kept < 1.0 - 1e-12 {
            clipped += 1;
        }
        for w in touched_windows(&grid, r) {
            query_count[w] += 1;
        }
        if let Some(w) = grid.window_of(r.arrival_ts) {
            arrivals[w] += 1;
            busy[w] += r.duration_ms as f64;
            match trace.mode {
                TraceMode::Counts => {
                    for (s, v) in op_sums[w].iter_mut().zip(&r.operators) {
                        *s += v;
                    }
                }
                TraceMode::TimeShares => {
                    let weight = r.duration_ms as f64;
                    op_weights[w] += weight;
                    for (s, v) in op_sums[w].iter_mut().zip(&r.operators) {
                        *s += weight * v;
                    }
                }
            }
        }
    }
    if clipped > 0 {
        log::info!("{clipped} queries overhang the trace span; their outside mass was discarded");
    }

    let mut intervals = Vec::with_capacity(grid.n_intervals());
    for g in 0..grid.n_intervals() {
        intervals.push(IntervalTarget {
            window_index: g / per,
            interval_index: g % per,
            interval_start_ts: grid.interval_start(g),
            interval_len_ms: grid.interval_len_ms,
            metrics: interval_sums[g * n_metrics..(g + 1) * n_metrics].to_vec(),
        });
    }

    let mut windows = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let mut metrics = vec![0.0; n_metrics];
        for it in &intervals[w * per..(w + 1) * per] {
            for (m, v) in metrics.iter_mut().zip(&it.metrics) {
                *m += v;
            }
        }
        let operators = match trace.mode {
            TraceMode::Counts => op_sums[w].clone(),
            TraceMode::TimeShares => {
                if op_weights[w] > 0.0 {
                    op_sums[w].iter().map(|s| s / op_weights[w]).collect()
                } else if arrivals[w] > 0 {
                    // all arrivals have zero duration: plain mean
                    let rs = trace
                        .records
                        .iter()
                        .filter(|r| grid.window_of(r.arrival_ts) == Some(w));
                    let mut sums = vec![0.0; n_ops];
                    for r in rs {
                        for (s, v) in sums.iter_mut().zip(&r.operators) {
                            *s += v;
                        }
                    }
                    sums.iter().map(|s| s / arrivals[w] as f64).collect()
                } else {
                    vec![0.0; n_ops]
                }
            }
        };
        windows.push(WindowTarget {
            window_index: w,
            window_start_ts: grid.window_start(w),
            window_len_ms: grid.window_len_ms,
            feature: PerformanceFeature::new(metrics, operators),
            query_count: query_count[w],
            busy_ms: busy[w],
        });
    }

    Ok(Targets {
        schema: trace.schema.clone(),
        mode: trace.mode,
        grid,
        windows,
        intervals,
    })
}

/// Windows that receive a nonzero share of the record's mass.
pub(crate) fn touched_windows(grid: &TimeGrid, r: &QueryRecord) -> std::ops::Range<usize> {
    if r.duration_ms == 0 {
        return match grid.window_of(r.arrival_ts) {
            Some(w) => w..w + 1,
            None => 0..0,
        };
    }
    let a = r.arrival_ts.max(grid.start_ts);
    let b = r.end_ts().min(grid.end_ts());
    if a >= b {
        return 0..0;
    }
    let first = grid.window_of(a).unwrap();
    let last = grid.window_of(b - 1).unwrap();
    first..last + 1
}

impl Targets {
    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut w = csvio::writer(&dir.join("windows.csv"))?;
        let mut header = vec![
            "window_index",
            "window_start_ts",
            "window_len_ms",
            "query_count",
            "busy_ms",
        ];
        header.extend(self.schema.names());
        w.write_record(&header)?;
        for t in &self.windows {
            let mut row = vec![
                t.window_index.to_string(),
                t.window_start_ts.to_string(),
                t.window_len_ms.to_string(),
                t.query_count.to_string(),
                csvio::fmt_f64(t.busy_ms),
            ];
            row.extend(t.feature.values().map(csvio::fmt_f64));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;

        let mut w = csvio::writer(&dir.join("intervals.csv"))?;
        let mut header = vec![
            "window_index",
            "interval_index",
            "interval_start_ts",
            "interval_len_ms",
        ];
        header.extend(self.schema.metrics.iter().map(String::as_str));
        w.write_record(&header)?;
        for t in &self.intervals {
            let mut row = vec![
                t.window_index.to_string(),
                t.interval_index.to_string(),
                t.interval_start_ts.to_string(),
                t.interval_len_ms.to_string(),
            ];
            row.extend(t.metrics.iter().map(|v| csvio::fmt_f64(*v)));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        Ok(())
    }

    pub fn read_csv(dir: impl AsRef<Path>, schema: &FeatureSchema, mode: TraceMode) -> Result<Targets> {
        let dir = dir.as_ref();
        let mut rdr = csvio::reader(&dir.join("windows.csv"))?;
        let h = Header::new(rdr.headers()?);
        let cols = [
            h.require("window_index")?,
            h.require("window_start_ts")?,
            h.require("window_len_ms")?,
            h.require("query_count")?,
            h.require("busy_ms")?,
        ];
        let metric_cols = schema.metrics.iter().map(|m| h.require(m)).collect::<Result<Vec<_>>>()?;
        let op_cols = schema.operators.iter().map(|m| h.require(m)).collect::<Result<Vec<_>>>()?;
        let mut windows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let metrics = metric_cols
                .iter()
                .zip(&schema.metrics)
                .map(|(&c, n)| csvio::parse_nonneg(&rec, c, row, n))
                .collect::<Result<Vec<_>>>()?;
            let operators = op_cols
                .iter()
                .zip(&schema.operators)
                .map(|(&c, n)| csvio::parse_nonneg(&rec, c, row, n))
                .collect::<Result<Vec<_>>>()?;
            windows.push(WindowTarget {
                window_index: csvio::parse(&rec, cols[0], row, "window_index")?,
                window_start_ts: csvio::parse(&rec, cols[1], row, "window_start_ts")?,
                window_len_ms: csvio::parse(&rec, cols[2], row, "window_len_ms")?,
                query_count: csvio::parse(&rec, cols[3], row, "query_count")?,
                busy_ms: csvio::parse_nonneg(&rec, cols[4], row, "busy_ms")?,
                feature: PerformanceFeature::new(metrics, operators),
            });
        }

        let mut rdr = csvio::reader(&dir.join("intervals.csv"))?;
        let h = Header::new(rdr.headers()?);
        let cols = [
            h.require("window_index")?,
            h.require("interval_index")?,
            h.require("interval_start_ts")?,
            h.require("interval_len_ms")?,
        ];
        let metric_cols = schema.metrics.iter().map(|m| h.require(m)).collect::<Result<Vec<_>>>()?;
        let mut intervals = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            intervals.push(IntervalTarget {
                window_index: csvio::parse(&rec, cols[0], row, "window_index")?,
                interval_index: csvio::parse(&rec, cols[1], row, "interval_index")?,
                interval_start_ts: csvio::parse(&rec, cols[2], row, "interval_start_ts")?,
                interval_len_ms: csvio::parse(&rec, cols[3], row, "interval_len_ms")?,
                metrics: metric_cols
                    .iter()
                    .zip(&schema.metrics)
                    .map(|(&c, n)| csvio::parse_nonneg(&rec, c, row, n))
                    .collect::<Result<Vec<_>>>()?,
            });
        }

        let first = windows
            .first()
            .ok_or_else(|| Error::Grid("targets contain no windows".into()))?;
        let interval_len = intervals
            .first()
            .map(|t| t.interval_len_ms)
            .ok_or_else(|| Error::Grid("targets contain no intervals".into()))?;
        let grid = TimeGrid::new(first.window_start_ts, first.window_len_ms, interval_len, windows.len())?;
        let targets = Targets {
            schema: schema.clone(),
            mode,
            grid,
            windows,
            intervals,
        };
        targets.check_grid()?;
        Ok(targets)
    }

    /// Verifies that windows and intervals describe the same contiguous grid.
    pub fn check_grid(&self) -> Result<()> {
        let g = &self.grid;
        if self.windows.len() != g.n_windows {
            return Err(Error::Grid(format!(
                "{} windows for a grid of {}",
                self.windows.len(),
                g.n_windows
            )));
        }
        if self.intervals.len() != g.n_intervals() {
            return Err(Error::Grid(format!(
                "{} intervals for a grid of {}",
                self.intervals.len(),
                g.n_intervals()
            )));
        }
        for (w, t) in self.windows.iter().enumerate() {
            if t.window_index != w || t.window_start_ts != g.window_start(w) || t.window_len_ms != g.window_len_ms {
                return Err(Error::Grid(format!("window {w} does not match the grid")));
            }
        }
        let per = g.intervals_per_window();
        for (k, t) in self.intervals.iter().enumerate() {
            if t.window_index != k / per
                || t.interval_index != k % per
                || t.interval_start_ts != g.interval_start(k)
                || t.interval_len_ms != g.interval_len_ms
            {
                return Err(Error::Grid(format!(
                    "interval {} of window {} does not match the grid",
                    t.interval_index, t.window_index
                )));
            }
        }
        Ok(())
    }
}

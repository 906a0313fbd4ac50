//! Fidelity metrics between target and replayed series.
//!
//! Geometric means are taken as the exponential of the mean log so long series
//! of extreme values neither overflow nor underflow.

use std::path::Path;

use crate::csvio;
use crate::error::{Error, Result};
use crate::trace::{build_targets, AggregationSpec, Targets, Trace};

pub const DEFAULT_EPS: f64 = 1e-9;

fn check_lengths(targets: &[f64], achieved: &[f64]) -> Result<()> {
    if targets.len() != achieved.len() {
        return Err(Error::LengthMismatch {
            left: targets.len(),
            right: achieved.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::LengthMismatch { left: 0, right: 0 });
    }
    Ok(())
}

/// `(1/n) Σ |F − F̃|`.
pub fn mae(targets: &[f64], achieved: &[f64]) -> Result<f64> {
    check_lengths(targets, achieved)?;
    let total: f64 = targets.iter().zip(achieved).map(|(t, a)| (t - a).abs()).sum();
    Ok(total / targets.len() as f64)
}

/// `(Π (|F − F̃| / max(|F|, eps) + 1))^(1/n) − 1`.
pub fn gmape(targets: &[f64], achieved: &[f64], eps: f64) -> Result<f64> {
    check_lengths(targets, achieved)?;
    let logs: f64 = targets
        .iter()
        .zip(achieved)
        .map(|(t, a)| ((t - a).abs() / t.abs().max(eps)).ln_1p())
        .sum();
    Ok((logs / targets.len() as f64).exp_m1())
}

/// `(Π max(F/F̃, F̃/F))^(1/n)` with both values floored at `eps`.
pub fn gmqe(targets: &[f64], achieved: &[f64], eps: f64) -> Result<f64> {
    check_lengths(targets, achieved)?;
    let logs: f64 = targets
        .iter()
        .zip(achieved)
        .map(|(t, a)| (t.max(eps).ln() - a.max(eps).ln()).abs())
        .sum();
    Ok((logs / targets.len() as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Window,
    Interval,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Window => "window",
            Level::Interval => "interval",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub level: Level,
    pub dimension: String,
    pub mae: f64,
    pub gmape: f64,
    pub gmqe: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub ts: i64,
    pub dimension: String,
    pub target: f64,
    pub replayed: f64,
}

/// Per-dimension errors at window level (metrics and operators) and interval
/// level (metrics only), with the curves they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub rows: Vec<MetricRow>,
    pub plot: Vec<PlotPoint>,
}

impl FidelityReport {
    pub fn get(&self, level: Level, dimension: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.level == level && r.dimension == dimension)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csvio::writer(path)?;
        w.write_record(["level", "dimension", "metric", "value", "n"])?;
        for r in &self.rows {
            for (name, v) in [("mae", r.mae), ("gmape", r.gmape), ("gmqe", r.gmqe)] {
                w.write_record([
                    r.level.as_str(),
                    &r.dimension,
                    name,
                    &csvio::fmt_f64(v),
                    &r.n.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn write_plot_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csvio::writer(path)?;
        w.write_record(["ts", "dimension", "target", "replayed"])?;
        for p in &self.plot {
            w.write_record([
                p.ts.to_string(),
                p.dimension.clone(),
                csvio::fmt_f64(p.target),
                csvio::fmt_f64(p.replayed),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Aggregates `replayed` on the target grid and compares.
pub fn report(targets: &Targets, replayed: &Trace, eps: f64) -> Result<FidelityReport> {
    let achieved = build_targets(replayed, &AggregationSpec::on_grid(&targets.grid))?;
    compare(targets, &achieved, eps)
}

/// Compares two target sets that must share a grid and schema.
pub fn compare(targets: &Targets, achieved: &Targets, eps: f64) -> Result<FidelityReport> {
    if targets.grid != achieved.grid {
        return Err(Error::Grid(format!(
            "target grid {:?} differs from replayed grid {:?}",
            targets.grid, achieved.grid
        )));
    }
    if targets.schema != achieved.schema {
        return Err(Error::DimensionMismatch {
            expected: targets.schema.dims(),
            found: achieved.schema.dims(),
        });
    }
    let schema = &targets.schema;
    let nm = schema.n_metrics();
    let mut rows = Vec::new();
    let mut plot = Vec::new();

    let mut push = |level: Level, dimension: &str, t: &[f64], a: &[f64]| -> Result<()> {
        rows.push(MetricRow {
            level,
            dimension: dimension.to_string(),
            mae: mae(t, a)?,
            gmape: gmape(t, a, eps)?,
            gmqe: gmqe(t, a, eps)?,
            n: t.len(),
        });
        Ok(())
    };

    for (d, name) in schema.names().enumerate() {
        let value = |f: &crate::feature::PerformanceFeature| f.values().nth(d).unwrap_or(0.0);
        let t: Vec<f64> = targets.windows.iter().map(|w| value(&w.feature)).collect();
        let a: Vec<f64> = achieved.windows.iter().map(|w| value(&w.feature)).collect();
        push(Level::Window, name, &t, &a)?;
        if d >= nm {
            for (w, (tv, av)) in targets.windows.iter().zip(t.iter().zip(&a)) {
                plot.push(PlotPoint {
                    ts: w.window_start_ts,
                    dimension: name.to_string(),
                    target: *tv,
                    replayed: *av,
                });
            }
        }
    }
    for (d, name) in schema.metrics.iter().enumerate() {
        let t: Vec<f64> = targets.intervals.iter().map(|i| i.metrics[d]).collect();
        let a: Vec<f64> = achieved.intervals.iter().map(|i| i.metrics[d]).collect();
        push(Level::Interval, name, &t, &a)?;
        for (it, (tv, av)) in targets.intervals.iter().zip(t.iter().zip(&a)) {
            plot.push(PlotPoint {
                ts: it.interval_start_ts,
                dimension: name.clone(),
                target: *tv,
                replayed: *av,
            });
        }
    }
    Ok(FidelityReport { rows, plot })
}

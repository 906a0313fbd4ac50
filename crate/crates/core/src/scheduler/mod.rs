//! Start-time assignment for selected component instances.
//!
//! Each window is annealed on its own: instances start uniformly at random
//! inside the window, moves redraw one instance's start on a fixed grid, and
//! the energy is the summed relative interval error of the processor-sharing
//! replay of that window's instances.

pub mod engine;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::{Catalog, WorkloadComponent};
use crate::csvio::{self, Header};
use crate::error::{Error, Result};
use crate::seed;
use crate::selector::SelectionPlan;
use crate::trace::{IntervalTarget, Targets, TimeGrid};

use engine::Job;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub window_index: usize,
    pub component_id: String,
    pub instance_index: u32,
    pub start_ts: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schedule {
    pub entries: Vec<ScheduleEntry>,
}

impl Schedule {
    /// Checks that starts fall inside their windows and that the entries cover
    /// every planned instance exactly once.
    pub fn validate(&self, plans: &[SelectionPlan], grid: &TimeGrid) -> Result<()> {
        let mut expected: BTreeMap<(usize, &str), u32> = BTreeMap::new();
        for p in plans {
            for (id, &k) in &p.counts {
                *expected.entry((p.window_index, id.as_str())).or_insert(0) += k;
            }
        }
        let mut seen: BTreeMap<(usize, &str), Vec<u32>> = BTreeMap::new();
        for e in &self.entries {
            if grid.window_of(e.start_ts) != Some(e.window_index) {
                return Err(Error::Schema(format!(
                    "instance {}#{} starts at {} outside window {}",
                    e.component_id, e.instance_index, e.start_ts, e.window_index
                )));
            }
            seen.entry((e.window_index, e.component_id.as_str()))
                .or_default()
                .push(e.instance_index);
        }
        for (key, count) in &expected {
            let mut got = seen.remove(key).unwrap_or_default();
            got.sort_unstable();
            if got != (0..*count).collect::<Vec<_>>() {
                return Err(Error::Schema(format!(
                    "window {} component {} has instances {:?}, expected 0..{}",
                    key.0, key.1, got, count
                )));
            }
        }
        if let Some(((w, id), _)) = seen.into_iter().next() {
            return Err(Error::Schema(format!("window {w} schedules unplanned component {id}")));
        }
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csvio::writer(path)?;
        w.write_record(["window_index", "component_id", "instance_index", "start_ts"])?;
        for e in &self.entries {
            w.write_record([
                e.window_index.to_string(),
                e.component_id.clone(),
                e.instance_index.to_string(),
                e.start_ts.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Schedule> {
        let mut rdr = csvio::reader(path.as_ref())?;
        let h = Header::new(rdr.headers()?);
        let cols = [
            h.require("window_index")?,
            h.require("component_id")?,
            h.require("instance_index")?,
            h.require("start_ts")?,
        ];
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            entries.push(ScheduleEntry {
                window_index: csvio::parse(&rec, cols[0], row, "window_index")?,
                component_id: csvio::field(&rec, cols[1]).to_string(),
                instance_index: csvio::parse(&rec, cols[2], row, "instance_index")?,
                start_ts: csvio::parse(&rec, cols[3], row, "start_ts")?,
            });
        }
        Ok(Schedule { entries })
    }
}

/// One executed instance: start, simulated completion and the whole-millisecond
/// duration recorded for it (never shorter than the profiled duration).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Execution {
    pub start_ts: i64,
    pub completion_ms: f64,
    pub duration_ms: u64,
}

fn recorded_duration(start: i64, completion: f64) -> u64 {
    let d = completion - start as f64;
    (d - 1e-6).ceil().max(0.0) as u64
}

/// Runs the processor-sharing model over `(start, component)` pairs.
pub(crate) fn execute(instances: &[(i64, &WorkloadComponent)], cores: u32) -> Vec<Execution> {
    let jobs: Vec<Job> = instances
        .iter()
        .map(|(s, c)| Job {
            start_ms: *s as f64,
            work_ms: c.duration_ms,
        })
        .collect();
    let out = engine::simulate(&jobs, cores);
    instances
        .iter()
        .zip(out.completions)
        .map(|((s, _), done)| Execution {
            start_ts: *s,
            completion_ms: done,
            duration_ms: recorded_duration(*s, done),
        })
        .collect()
}

fn resolve<'c>(schedule: &Schedule, catalog: &'c Catalog) -> Result<Vec<(i64, &'c WorkloadComponent)>> {
    schedule
        .entries
        .iter()
        .map(|e| Ok((e.start_ts, catalog.get(&e.component_id)?)))
        .collect()
}

/// Deposits each instance's metric mass uniformly over its simulated execution
/// span and returns per-interval sums on `grid` (row-major, metrics innermost).
pub(crate) fn interval_sums(instances: &[(i64, &WorkloadComponent)], grid: &TimeGrid, cores: u32, n_metrics: usize) -> Vec<f64> {
    let runs = execute(instances, cores);
    let mut out = vec![0.0; grid.n_intervals() * n_metrics];
    for ((_, c), run) in instances.iter().zip(&runs) {
        grid.apportion(run.start_ts, run.duration_ms, &c.feature.metrics, &mut out);
    }
    out
}

pub fn estimate_interval_features(
    schedule: &Schedule,
    catalog: &Catalog,
    grid: &TimeGrid,
    cores: u32,
) -> Result<Vec<IntervalTarget>> {
    let instances = resolve(schedule, catalog)?;
    let nm = catalog.schema().n_metrics();
    let sums = interval_sums(&instances, grid, cores, nm);
    let per = grid.intervals_per_window();
    Ok((0..grid.n_intervals())
        .map(|g| IntervalTarget {
            window_index: g / per,
            interval_index: g % per,
            interval_start_ts: grid.interval_start(g),
            interval_len_ms: grid.interval_len_ms,
            metrics: sums[g * nm..(g + 1) * nm].to_vec(),
        })
        .collect())
}

fn relative_error(achieved: &[f64], target: &[f64], eps: f64) -> f64 {
    achieved
        .iter()
        .zip(target)
        .map(|(a, t)| (a - t).abs() / t.max(eps))
        .sum()
}

/// Treats a contiguous run of intervals as a one-window grid.
fn grid_of(intervals: &[IntervalTarget]) -> Result<TimeGrid> {
    let first = intervals
        .first()
        .ok_or_else(|| Error::Grid("no interval targets".into()))?;
    let len = first.interval_len_ms;
    for (k, t) in intervals.iter().enumerate() {
        if t.interval_len_ms != len || t.interval_start_ts != first.interval_start_ts + (k as u64 * len) as i64 {
            return Err(Error::Grid("interval targets are not contiguous".into()));
        }
    }
    TimeGrid::new(first.interval_start_ts, len * intervals.len() as u64, len, 1)
}

/// `Σ_intervals Σ_metrics |achieved − target| / max(target, ε)`.
pub fn energy(
    schedule: &Schedule,
    interval_targets: &[IntervalTarget],
    catalog: &Catalog,
    cores: u32,
    eps: f64,
) -> Result<f64> {
    let nm = catalog.schema().n_metrics();
    if let Some(t) = interval_targets.iter().find(|t| t.metrics.len() != nm) {
        return Err(Error::DimensionMismatch {
            expected: nm,
            found: t.metrics.len(),
        });
    }
    let grid = grid_of(interval_targets)?;
    let instances = resolve(schedule, catalog)?;
    let sums = interval_sums(&instances, &grid, cores, nm);
    let target: Vec<f64> = interval_targets.iter().flat_map(|t| t.metrics.iter().copied()).collect();
    Ok(relative_error(&sums, &target, eps))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Temperature {
    /// Calibrated from sampled uphill moves of the initial state.
    Auto,
    Fixed { max: f64, min: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaConfig {
    /// `S`: stop after this many consecutive steps without an accepted improvement.
    pub no_improve_steps: usize,
    /// Step cap; the cooling schedule reaches the minimum temperature here.
    pub max_steps: usize,
    pub temperature: Temperature,
    pub move_granularity_ms: u64,
    /// Moves sampled to calibrate the automatic temperatures.
    pub calibration_moves: usize,
    pub denominator_floor: f64,
    pub cores: u32,
}

impl Default for SaConfig {
    fn default() -> Self {
        Self {
            no_improve_steps: 100,
            max_steps: 20_000,
            temperature: Temperature::Auto,
            move_granularity_ms: 1000,
            calibration_moves: 100,
            denominator_floor: 1.0,
            cores: 8,
        }
    }
}

/// Trace of one window's annealing run.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealReport {
    pub window_index: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub steps: usize,
    pub v_max: f64,
    pub v_min: f64,
    /// Best energy after every step.
    pub best_history: Vec<f64>,
    /// Current energy after every accepted move.
    pub accepted_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOutcome {
    pub schedule: Schedule,
    pub reports: Vec<AnnealReport>,
}

/// Instances of one window and their interval targets.
struct WindowProblem<'a> {
    window_index: usize,
    window_start: i64,
    window_len: u64,
    grid: TimeGrid,
    components: Vec<&'a WorkloadComponent>,
    instance_index: Vec<u32>,
    target: Vec<f64>,
    n_metrics: usize,
    cores: u32,
    eps: f64,
    granularity: u64,
}

impl<'a> WindowProblem<'a> {
    fn new(plan: &SelectionPlan, targets: &Targets, catalog: &'a Catalog, cfg: &SaConfig) -> Result<Self> {
        let w = plan.window_index;
        let grid = targets.grid.single_window(w);
        let mut components = Vec::new();
        let mut instance_index = Vec::new();
        for (id, &k) in &plan.counts {
            let c = catalog.get(id)?;
            for i in 0..k {
                components.push(c);
                instance_index.push(i);
            }
        }
        Ok(Self {
            window_index: w,
            window_start: grid.start_ts,
            window_len: grid.window_len_ms,
            grid,
            components,
            instance_index,
            target: targets
                .window_intervals(w)
                .iter()
                .flat_map(|t| t.metrics.iter().copied())
                .collect(),
            n_metrics: targets.schema.n_metrics(),
            cores: cfg.cores,
            eps: cfg.denominator_floor,
            granularity: cfg.move_granularity_ms.max(1),
        })
    }

    fn slots(&self) -> u64 {
        self.window_len.div_ceil(self.granularity)
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> i64 {
        let slot = rng.random_range(0..self.slots());
        self.window_start + (slot * self.granularity).min(self.window_len - 1) as i64
    }

    fn energy(&self, starts: &[i64]) -> f64 {
        let instances: Vec<(i64, &WorkloadComponent)> =
            starts.iter().copied().zip(self.components.iter().copied()).collect();
        let sums = interval_sums(&instances, &self.grid, self.cores, self.n_metrics);
        relative_error(&sums, &self.target, self.eps)
    }

    fn entries(&self, starts: &[i64]) -> Vec<ScheduleEntry> {
        self.components
            .iter()
            .zip(&self.instance_index)
            .zip(starts)
            .map(|((c, &k), &s)| ScheduleEntry {
                window_index: self.window_index,
                component_id: c.component_id.clone(),
                instance_index: k,
                start_ts: s,
            })
            .collect()
    }
}

fn window_rng(seed: u64, window: usize) -> ChaCha8Rng {
    seed::stream(seed, &format!("schedule/window/{window}"))
}

/// Uniformly random starts; also the annealer's initial state for the same seed.
pub fn random_assignment(plans: &[SelectionPlan], targets: &Targets, catalog: &Catalog, cfg: &SaConfig, seed: u64) -> Result<Schedule> {
    let mut entries = Vec::new();
    for plan in plans {
        let wp = WindowProblem::new(plan, targets, catalog, cfg)?;
        let mut rng = window_rng(seed, plan.window_index);
        let starts: Vec<i64> = (0..wp.components.len()).map(|_| wp.draw(&mut rng)).collect();
        entries.extend(wp.entries(&starts));
    }
    Ok(Schedule { entries })
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn anneal(wp: &WindowProblem, cfg: &SaConfig, seed: u64) -> (Vec<i64>, AnnealReport) {
    let mut rng = window_rng(seed, wp.window_index);
    let n = wp.components.len();
    let mut current: Vec<i64> = (0..n).map(|_| wp.draw(&mut rng)).collect();
    let mut energy = wp.energy(&current);
    let initial_energy = energy;
    let mut report = AnnealReport {
        window_index: wp.window_index,
        initial_energy,
        final_energy: energy,
        steps: 0,
        v_max: 0.0,
        v_min: 0.0,
        best_history: Vec::new(),
        accepted_history: Vec::new(),
    };
    if n == 0 {
        return (current, report);
    }

    let (v_max, v_min) = match cfg.temperature {
        Temperature::Fixed { max, min } => (max, min.min(max)),
        Temperature::Auto => {
            let mut uphill = Vec::new();
            let mut probe = current.clone();
            for _ in 0..cfg.calibration_moves {
                let i = rng.random_range(0..n);
                let old = probe[i];
                probe[i] = wp.draw(&mut rng);
                let delta = wp.energy(&probe) - energy;
                probe[i] = old;
                if delta > 0.0 {
                    uphill.push(delta);
                }
            }
            match median(uphill) {
                // accept the median uphill move with probability 0.98 at the start, 1e-4 at the end
                Some(m) => (-m / 0.98f64.ln(), -m / 1e-4f64.ln()),
                None => (1e-12, 1e-12),
            }
        }
    };
    let steps = cfg.max_steps.max(1);
    let alpha = if v_max > 0.0 && v_min > 0.0 {
        (v_min / v_max).powf(1.0 / steps as f64).min(1.0 - 1e-9)
    } else {
        0.5
    };
    report.v_max = v_max;
    report.v_min = v_min;

    let mut best = current.clone();
    let mut best_energy = energy;
    let mut temperature = v_max;
    let mut since_improvement = 0usize;
    let mut taken = 0usize;
    while taken < steps && since_improvement < cfg.no_improve_steps {
        taken += 1;
        let i = rng.random_range(0..n);
        let old = current[i];
        current[i] = wp.draw(&mut rng);
        let candidate = wp.energy(&current);
        let delta = candidate - energy;
        let accept = delta <= 0.0 || (temperature > 0.0 && rng.random::<f64>() < (-delta / temperature).exp());
        if accept {
            let improved = delta < -1e-12 * energy.abs().max(1.0);
            since_improvement = if improved { 0 } else { since_improvement + 1 };
            energy = candidate;
            report.accepted_history.push(energy);
            if energy < best_energy {
                best_energy = energy;
                best.clone_from(&current);
            }
        } else {
            current[i] = old;
            since_improvement += 1;
        }
        report.best_history.push(best_energy);
        temperature *= alpha;
    }
    report.steps = taken;
    report.final_energy = best_energy;
    (best, report)
}

pub fn assign_timestamps(
    plans: &[SelectionPlan],
    targets: &Targets,
    catalog: &Catalog,
    cfg: &SaConfig,
    seed: u64,
    jobs: usize,
) -> Result<ScheduleOutcome> {
    let results = crate::selector::run_parallel(jobs, plans.len(), |k| {
        let wp = WindowProblem::new(&plans[k], targets, catalog, cfg)?;
        let (starts, report) = anneal(&wp, cfg, seed);
        Ok((wp.entries(&starts), report))
    })?;
    let mut schedule = Schedule::default();
    let mut reports = Vec::with_capacity(results.len());
    for (entries, report) in results {
        schedule.entries.extend(entries);
        reports.push(report);
    }
    Ok(ScheduleOutcome { schedule, reports })
}

//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wlsynth_core::catalog::{Catalog, DatabaseDescriptor, Origin, WorkloadComponent};
use wlsynth_core::config::Config;
use wlsynth_core::scheduler::{Schedule, ScheduleEntry};
use wlsynth_core::selector::SelectionProblem;
use wlsynth_core::simulator::replay;
use wlsynth_core::trace::{QueryRecord, Trace, TraceMode};
use wlsynth_core::{FeatureSchema, PerformanceFeature};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn schema() -> FeatureSchema {
    FeatureSchema::new(["cpu_time_ms", "scanned_bytes"], ["join_num", "aggregate_num", "filter_num"])
}

pub fn component(id: &str, duration_ms: f64, metrics: Vec<f64>, operators: Vec<f64>) -> WorkloadComponent {
    WorkloadComponent {
        component_id: id.to_string(),
        query_ref: id.to_string(),
        database: DatabaseDescriptor::new("tpch", 1.0, 0).unwrap(),
        duration_ms,
        feature: PerformanceFeature::new(metrics, operators),
        origin: Origin::Benchmark,
        duration_range: None,
    }
}

pub fn catalog_of(schema: &FeatureSchema, components: Vec<WorkloadComponent>) -> Catalog {
    Catalog::from_components(schema.clone(), components).unwrap()
}

/// Components with realistic magnitudes: durations of a few seconds, CPU time
/// loosely tied to duration, integer operator counts.
pub fn random_catalog(r: &mut ChaCha8Rng, n: usize, prefix: &str) -> Catalog {
    let schema = schema();
    let components = (0..n)
        .map(|i| {
            let duration = r.random_range(2_000..30_000) as f64;
            let cpu = (duration * r.random_range(0.3..2.0)).round();
            let sb = r.random_range(10_000_000u64..1_000_000_000) as f64;
            let ops = (0..3).map(|_| r.random_range(0..6) as f64).collect();
            component(&format!("{prefix}{i:02}"), duration, vec![cpu, sb], ops)
        })
        .collect();
    catalog_of(&schema, components)
}

/// Objective recomputed from the definition: weighted relative error per
/// dimension with a floored denominator.
pub fn direct_objective(problem: &SelectionProblem, x: &[u32]) -> f64 {
    let target = problem.target.to_vec();
    let mut achieved = vec![0.0; target.len()];
    for (c, &k) in problem.components.iter().zip(x) {
        for (a, v) in achieved.iter_mut().zip(c.feature.values()) {
            *a += k as f64 * v;
        }
    }
    target
        .iter()
        .zip(&achieved)
        .enumerate()
        .map(|(d, (t, a))| problem.weights[d] * (a - t).abs() / t.abs().max(problem.denominator_floor[d]))
        .sum()
}

pub fn direct_feasible(problem: &SelectionProblem, x: &[u32]) -> bool {
    let total: u64 = x.iter().map(|&v| v as u64).sum();
    let busy: f64 = problem.components.iter().zip(x).map(|(c, &k)| k as f64 * c.duration_ms).sum();
    x.iter().all(|&v| v <= problem.max_repetitions)
        && total <= problem.max_total as u64
        && problem.duration_budget_ms.is_none_or(|l| busy <= l + 1e-9)
}

/// Exhaustive search over `[0, y]^n` in lexicographic order. Returns the optimum
/// and the lexicographically smallest vector (components in input order) within
/// `tie` of it.
pub fn enumerate(problem: &SelectionProblem, tie: f64) -> (f64, Vec<u32>) {
    let n = problem.components.len();
    let y = problem.max_repetitions;
    let mut all = Vec::new();
    let mut x = vec![0u32; n];
    loop {
        if direct_feasible(problem, &x) {
            all.push((direct_objective(problem, &x), x.clone()));
        }
        let mut i = n;
        loop {
            if i == 0 {
                let best = all.iter().map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
                let first = all.iter().find(|(v, _)| *v <= best + tie).unwrap().1.clone();
                return (best, first);
            }
            i -= 1;
            if x[i] < y {
                x[i] += 1;
                break;
            }
            x[i] = 0;
        }
    }
}

pub fn counts_vector(problem: &SelectionProblem, counts: &BTreeMap<String, u32>) -> Vec<u32> {
    problem
        .components
        .iter()
        .map(|c| counts.get(&c.component_id).copied().unwrap_or(0))
        .collect()
}

/// 1 ms fixed-step integration of processor sharing. Jobs are `(start, work)`
/// with whole-millisecond starts, so arrivals fall on step boundaries. Within a
/// step each active job receives `min(1, cores / P)` ms of service per ms; when
/// a job finishes inside the step the rest of the step is shared among the
/// others. Returns completions and `∫ min(P, cores) dt`.
pub fn integrate(jobs: &[(i64, f64)], cores: u32) -> (Vec<f64>, f64) {
    let cores = cores as f64;
    let mut remaining: Vec<f64> = jobs.iter().map(|j| j.1).collect();
    let mut done = vec![f64::NAN; jobs.len()];
    let mut busy = 0.0;
    let mut t = jobs.iter().map(|j| j.0).min().unwrap_or(0);
    while done.iter().any(|d| d.is_nan()) {
        let mut left = 1.0;
        while left > 0.0 {
            let active: Vec<usize> = (0..jobs.len())
                .filter(|&j| jobs[j].0 <= t && done[j].is_nan())
                .collect();
            if active.is_empty() {
                break;
            }
            let p = active.len() as f64;
            let rate = (cores / p).min(1.0);
            let first = active.iter().map(|&j| remaining[j] / rate).fold(f64::INFINITY, f64::min);
            let dt = first.min(left);
            busy += p.min(cores) * dt;
            for &j in &active {
                if remaining[j] / rate <= dt {
                    done[j] = t as f64 + (1.0 - left) + remaining[j] / rate;
                    remaining[j] = 0.0;
                } else {
                    remaining[j] -= rate * dt;
                }
            }
            left -= dt;
        }
        t += 1;
    }
    (done, busy)
}

/// Same-width grid of per-millisecond mass, summed per interval. Zero-length
/// queries put everything in their arrival interval.
pub fn millisecond_accumulate(records: &[QueryRecord], start: i64, interval: u64, n_intervals: usize, dims: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_intervals * dims];
    let end = start + (interval as usize * n_intervals) as i64;
    for r in records {
        if r.duration_ms == 0 {
            if r.arrival_ts >= start && r.arrival_ts < end {
                let g = ((r.arrival_ts - start) as u64 / interval) as usize;
                for (d, m) in r.metrics.iter().enumerate() {
                    out[g * dims + d] += m;
                }
            }
            continue;
        }
        let per_ms: Vec<f64> = r.metrics.iter().map(|m| m / r.duration_ms as f64).collect();
        for t in r.arrival_ts..r.end_ts() {
            if t < start || t >= end {
                continue;
            }
            let g = ((t - start) as u64 / interval) as usize;
            for (d, m) in per_ms.iter().enumerate() {
                out[g * dims + d] += m;
            }
        }
    }
    out
}

pub fn relative_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

pub const EPOCH: i64 = 1_700_000_000_000;
pub const WINDOW_MS: u64 = 300_000;

/// A known schedule replayed into a trace: the round-trip instance.
pub struct Planted {
    pub catalog: Catalog,
    pub schedule: Schedule,
    pub trace: Trace,
    pub counts: Vec<BTreeMap<String, u32>>,
}

/// `n_windows` five-minute windows, each running a random multiset of about
/// six catalog components. Starts leave a minute of slack before the window
/// end so the planted work stays inside its window.
pub fn planted(seed: u64, n_components: usize, n_windows: usize, cores: u32) -> Planted {
    let mut r = rng(seed);
    let catalog = random_catalog(&mut r, n_components, "c");
    let ids: Vec<String> = catalog.components().iter().map(|c| c.component_id.clone()).collect();
    let mut schedule = Schedule::default();
    let mut counts = Vec::new();
    for w in 0..n_windows {
        let mut window: BTreeMap<String, u32> = BTreeMap::new();
        for _ in 0..6 {
            let id = &ids[r.random_range(0..ids.len())];
            *window.entry(id.clone()).or_default() += r.random_range(1..4);
        }
        let ws = EPOCH + (w as u64 * WINDOW_MS) as i64;
        for (id, &k) in &window {
            for i in 0..k {
                schedule.entries.push(ScheduleEntry {
                    window_index: w,
                    component_id: id.clone(),
                    instance_index: i,
                    start_ts: ws + r.random_range(0..(WINDOW_MS - 60_000) as i64),
                });
            }
        }
        counts.push(window);
    }
    let trace = replay(&schedule, &catalog, cores)
        .unwrap()
        .into_trace(&catalog, TraceMode::Counts);
    Planted {
        catalog,
        schedule,
        trace,
        counts,
    }
}

/// Writes a planted instance to `dir` and returns a config pointing at it.
pub fn write_planted(p: &Planted, dir: &Path, seed: u64, n_windows: usize, extra: &str) -> Config {
    p.trace.export(dir.join("trace.csv")).unwrap();
    p.catalog.write_csv(dir.join("catalog.csv"), false).unwrap();
    let text = format!(
        r#"
metrics = ["cpu_time_ms", "scanned_bytes"]
operators = ["join_num", "aggregate_num", "filter_num"]
trace = "trace.csv"
catalog = "catalog.csv"
seed = {seed}
span_start_ts = {EPOCH}
n_windows = {n_windows}
{extra}
"#
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    Config::load(&path).unwrap()
}

/// Two windows: the first replays catalog queries, the second is a family of
/// join-heavy, CPU-heavy queries far outside what the catalog can combine into.
pub fn planted_gap() -> (Trace, Catalog) {
    let mut r = rng(70);
    let catalog = random_catalog(&mut r, 8, "b");
    let mut records = Vec::new();
    for i in 0..10 {
        let c = &catalog.components()[r.random_range(0..8)];
        records.push(QueryRecord {
            query_id: format!("a{i}"),
            arrival_ts: EPOCH + r.random_range(0..240_000),
            duration_ms: c.duration_ms as u64,
            metrics: c.feature.metrics.clone(),
            operators: c.feature.operators.clone(),
        });
    }
    for i in 0..12 {
        let arrival_ts = EPOCH + WINDOW_MS as i64 + r.random_range(0..240_000);
        let mut jitter = || r.random_range(0.97f64..1.03);
        records.push(QueryRecord {
            query_id: format!("h{i}"),
            arrival_ts,
            duration_ms: 20_000,
            metrics: vec![(200_000.0 * jitter()).round(), (5_000_000.0 * jitter()).round()],
            operators: vec![9.0, 4.0, 7.0],
        });
    }
    records.sort_by_key(|q| q.arrival_ts);
    (
        Trace {
            schema: schema(),
            mode: TraceMode::Counts,
            records,
        },
        catalog,
    )
}

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Independent metric formulas, evaluated as products of n-th roots rather
/// than sums of logarithms.
pub mod reference {
    pub fn mae(t: &[f64], a: &[f64]) -> f64 {
        t.iter().zip(a).fold(0.0, |acc, (x, y)| acc + (x - y).abs()) / t.len() as f64
    }

    pub fn gmape(t: &[f64], a: &[f64], eps: f64) -> f64 {
        let n = t.len() as f64;
        t.iter()
            .zip(a)
            .fold(1.0, |acc, (x, y)| acc * ((x - y).abs() / x.abs().max(eps) + 1.0).powf(1.0 / n))
            - 1.0
    }

    pub fn gmqe(t: &[f64], a: &[f64], eps: f64) -> f64 {
        let n = t.len() as f64;
        t.iter().zip(a).fold(1.0, |acc, (x, y)| {
            let (x, y) = (x.max(eps), y.max(eps));
            acc * (x / y).max(y / x).powf(1.0 / n)
        })
    }
}

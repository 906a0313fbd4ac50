//! Stage orchestration and the on-disk artifact layout.
//!
//! ```text
//! <out>/targets/windows.csv, intervals.csv
//! <out>/plans/plans.csv, summary.csv[, initial_plans.csv, queries.csv]
//! <out>/augment/catalog.csv, attempts.jsonl, queries.jsonl
//! <out>/schedule/schedule.csv, anneal.csv, history.csv
//! <out>/replay/trace.csv
//! <out>/report/report.csv, plot.csv
//! ```
//!
//! Every stage reads only what earlier stages wrote, so a run can resume from
//! any prefix of these files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::augmenter::{self, AugmentOutcome, DatabaseRegistry, HttpProvider, MockProvider, Provider};
use crate::catalog::{load_catalog, Catalog, SimulatedExecutor};
use crate::config::{Config, ProviderKind};
use crate::csvio;
use crate::error::{Error, Result};
use crate::metrics::{self, FidelityReport, Level};
use crate::scheduler::{self, AnnealReport, Schedule, ScheduleEntry};
use crate::selector::{self, QueryLevel, SelectionPlan};
use crate::simulator;
use crate::trace::{build_targets, ingest_trace, Targets, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Targets,
    Select,
    Augment,
    Schedule,
    Replay,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Targets => "targets",
            Stage::Select => "select",
            Stage::Augment => "augment",
            Stage::Schedule => "schedule",
            Stage::Replay => "replay",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Paths of every artifact under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn targets_dir(&self) -> PathBuf {
        self.root.join("targets")
    }
    pub fn plans(&self) -> PathBuf {
        self.root.join("plans/plans.csv")
    }
    pub fn plan_summary(&self) -> PathBuf {
        self.root.join("plans/summary.csv")
    }
    pub fn initial_plans(&self) -> PathBuf {
        self.root.join("plans/initial_plans.csv")
    }
    pub fn query_matches(&self) -> PathBuf {
        self.root.join("plans/queries.csv")
    }
    pub fn augmented_catalog(&self) -> PathBuf {
        self.root.join("augment/catalog.csv")
    }
    pub fn attempt_log(&self) -> PathBuf {
        self.root.join("augment/attempts.jsonl")
    }
    pub fn generated_queries(&self) -> PathBuf {
        self.root.join("augment/queries.jsonl")
    }
    pub fn schedule(&self) -> PathBuf {
        self.root.join("schedule/schedule.csv")
    }
    pub fn anneal(&self) -> PathBuf {
        self.root.join("schedule/anneal.csv")
    }
    pub fn anneal_history(&self) -> PathBuf {
        self.root.join("schedule/history.csv")
    }
    pub fn replay(&self) -> PathBuf {
        self.root.join("replay/trace.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report/report.csv")
    }
    pub fn plot(&self) -> PathBuf {
        self.root.join("report/plot.csv")
    }
}

pub fn load_trace(cfg: &Config) -> Result<Trace> {
    ingest_trace(&cfg.trace, &cfg.schema(), cfg.mode)
}

pub fn load_base_catalog(cfg: &Config) -> Result<Catalog> {
    let catalog = load_catalog(&cfg.catalog, &cfg.schema())?;
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    Ok(catalog)
}

/// Removes an augmented catalog left by an earlier run, so later stages do
/// not pick it up.
pub fn clear_augmentation(layout: &Layout) -> Result<()> {
    let path = layout.augmented_catalog();
    if path.exists() {
        std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// The augmented catalog when one was written, the configured one otherwise.
pub fn load_working_catalog(cfg: &Config, layout: &Layout) -> Result<Catalog> {
    let augmented = layout.augmented_catalog();
    if augmented.exists() {
        load_catalog(&augmented, &cfg.schema())
    } else {
        load_catalog(&cfg.catalog, &cfg.schema())
    }
}

pub fn load_targets(cfg: &Config, layout: &Layout) -> Result<Targets> {
    Targets::read_csv(layout.targets_dir(), &cfg.schema(), cfg.mode)
}

pub fn load_plans(cfg: &Config, layout: &Layout, targets: &Targets, catalog: &Catalog) -> Result<Vec<SelectionPlan>> {
    let counts = selector::read_plan_counts(layout.plans(), targets.windows.len())?;
    selector::plans_from_counts(counts, targets, catalog, &cfg.constraints()?)
}

pub fn run_targets(cfg: &Config, trace: &Trace, layout: &Layout) -> Result<Targets> {
    let targets = build_targets(trace, &cfg.aggregation())?;
    targets.write_csv(layout.targets_dir())?;
    Ok(targets)
}

fn write_plan_files(cfg: &Config, layout: &Layout, plans: &[SelectionPlan], targets: &Targets) -> Result<()> {
    selector::write_plans(plans, layout.plans())?;
    selector::write_summary(plans, targets, &cfg.constraints()?, layout.plan_summary())
}

pub fn run_select(cfg: &Config, targets: &Targets, catalog: &Catalog, layout: &Layout) -> Result<Vec<SelectionPlan>> {
    let plans = selector::solve_all_windows(targets, catalog, &cfg.constraints()?, cfg.jobs, None)?;
    write_plan_files(cfg, layout, &plans, targets)?;
    Ok(plans)
}

pub fn make_provider(cfg: &Config) -> Box<dyn Provider> {
    match cfg.provider.kind {
        ProviderKind::Mock => Box::new(MockProvider::new(cfg.schema(), cfg.provider.mock.clone())),
        ProviderKind::Http => Box::new(HttpProvider::new(
            cfg.provider.endpoint.clone().unwrap_or_default(),
            Duration::from_millis(cfg.provider.timeout_ms),
        )),
    }
}

pub fn make_executor(cfg: &Config) -> Result<SimulatedExecutor> {
    match &cfg.executor {
        Some(path) => SimulatedExecutor::load(path, &cfg.schema()),
        None => Ok(SimulatedExecutor::new(cfg.schema())),
    }
}

#[derive(Debug, Clone)]
pub struct AugmentStage {
    pub catalog: Catalog,
    pub plans: Vec<SelectionPlan>,
    pub outcome: AugmentOutcome,
}

/// Augments the catalog for badly fitted windows and re-solves every window,
/// starting from the previous plans.
pub fn run_augment(
    cfg: &Config,
    trace: &Trace,
    targets: &Targets,
    plans: &[SelectionPlan],
    catalog: &Catalog,
    provider: &dyn Provider,
    layout: &Layout,
) -> Result<AugmentStage> {
    let executor = make_executor(cfg)?;
    let acfg = cfg.augmentation();
    let registry = DatabaseRegistry::new(
        executor
            .databases()
            .iter()
            .cloned()
            .chain(catalog.databases().into_values()),
        acfg.schema_complexity.clone(),
    );
    let seed = crate::seed::derive_seed(cfg.seed, "augment");
    let outcome = augmenter::augment_catalog(trace, targets, plans, catalog, provider, &executor, &registry, &acfg, seed)?;
    outcome.catalog.write_csv(layout.augmented_catalog(), true)?;
    augmenter::write_attempt_log(layout.attempt_log(), outcome.attempts())?;
    augmenter::write_generated_queries(layout.generated_queries(), outcome.attempts())?;

    let plans = if outcome.added.is_empty() {
        plans.to_vec()
    } else {
        selector::write_plans(plans, layout.initial_plans())?;
        selector::solve_all_windows(targets, &outcome.catalog, &cfg.constraints()?, cfg.jobs, Some(plans))?
    };
    write_plan_files(cfg, layout, &plans, targets)?;
    Ok(AugmentStage {
        catalog: outcome.catalog.clone(),
        plans,
        outcome,
    })
}

fn write_anneal(layout: &Layout, reports: &[AnnealReport]) -> Result<()> {
    let path = layout.anneal();
    let mut w = csvio::writer(&path)?;
    w.write_record(["window_index", "steps", "initial_energy", "final_energy", "v_max", "v_min"])?;
    for r in reports {
        w.write_record([
            r.window_index.to_string(),
            r.steps.to_string(),
            csvio::fmt_f64(r.initial_energy),
            csvio::fmt_f64(r.final_energy),
            csvio::fmt_f64(r.v_max),
            csvio::fmt_f64(r.v_min),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = layout.anneal_history();
    let mut w = csvio::writer(&path)?;
    w.write_record(["window_index", "step", "best_energy"])?;
    for r in reports {
        for (step, e) in r.best_history.iter().enumerate() {
            w.write_record([r.window_index.to_string(), (step + 1).to_string(), csvio::fmt_f64(*e)])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Annealed start times, or uniformly random ones when `skip_ta` is set.
pub fn run_schedule(
    cfg: &Config,
    targets: &Targets,
    plans: &[SelectionPlan],
    catalog: &Catalog,
    layout: &Layout,
) -> Result<Schedule> {
    let sa = cfg.annealing();
    let seed = crate::seed::derive_seed(cfg.seed, "schedule");
    let (schedule, reports) = if cfg.skip_ta {
        (scheduler::random_assignment(plans, targets, catalog, &sa, seed)?, Vec::new())
    } else {
        let out = scheduler::assign_timestamps(plans, targets, catalog, &sa, seed, cfg.jobs)?;
        (out.schedule, out.reports)
    };
    schedule.validate(plans, &targets.grid)?;
    schedule.write_csv(layout.schedule())?;
    write_anneal(layout, &reports)?;
    Ok(schedule)
}

/// Matches every query on its own and dispatches the chosen instances at the
/// query's arrival. Plans are the per-window totals.
pub fn run_query_level(
    cfg: &Config,
    level: QueryLevel,
    trace: &Trace,
    targets: &Targets,
    catalog: &Catalog,
    layout: &Layout,
) -> Result<(Vec<SelectionPlan>, Schedule)> {
    let constraints = cfg.constraints()?;
    let max_total = constraints.total_cap.resolve(1);
    let grid = &targets.grid;
    let queries: Vec<(usize, &crate::trace::QueryRecord)> = trace
        .records
        .iter()
        .filter_map(|r| grid.window_of(r.arrival_ts).map(|w| (w, r)))
        .collect();
    let matches = selector::run_parallel(cfg.jobs, queries.len(), |i| {
        let (w, r) = queries[i];
        selector::match_query(w, &r.feature(), r.duration_ms as f64, catalog, trace.mode, level, max_total, &constraints)
    })?;

    let mut counts = vec![BTreeMap::<String, u32>::new(); targets.windows.len()];
    let mut schedule = Schedule::default();
    let path = layout.query_matches();
    let mut w = csvio::writer(&path)?;
    w.write_record(["query_id", "window_index", "component_id", "count", "objective"])?;
    for ((window, r), plan) in queries.iter().zip(&matches) {
        for (id, &k) in &plan.counts {
            w.write_record([
                r.query_id.clone(),
                window.to_string(),
                id.clone(),
                k.to_string(),
                csvio::fmt_f64(plan.objective_value),
            ])?;
            let slot = counts[*window].entry(id.clone()).or_insert(0);
            for _ in 0..k {
                schedule.entries.push(ScheduleEntry {
                    window_index: *window,
                    component_id: id.clone(),
                    instance_index: *slot,
                    start_ts: r.arrival_ts,
                });
                *slot += 1;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let plans = selector::plans_from_counts(counts, targets, catalog, &constraints)?;
    write_plan_files(cfg, layout, &plans, targets)?;
    schedule.write_csv(layout.schedule())?;
    Ok((plans, schedule))
}

pub fn run_replay(cfg: &Config, schedule: &Schedule, catalog: &Catalog, layout: &Layout) -> Result<Trace> {
    let replayed = simulator::replay(schedule, catalog, cfg.cores)?.into_trace(catalog, cfg.mode);
    replayed.export(layout.replay())?;
    Ok(replayed)
}

pub fn load_replay(cfg: &Config, layout: &Layout) -> Result<Trace> {
    ingest_trace(layout.replay(), &cfg.schema(), cfg.mode)
}

pub fn run_evaluate(cfg: &Config, targets: &Targets, replayed: &Trace, layout: &Layout) -> Result<FidelityReport> {
    let report = metrics::report(targets, replayed, cfg.report_eps)?;
    report.write_csv(layout.report())?;
    report.write_plot_csv(layout.plot())?;
    Ok(report)
}

/// Headline numbers of a pipeline run.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub out_dir: PathBuf,
    pub records: usize,
    pub windows: usize,
    pub components: usize,
    pub augmented_components: usize,
    pub bad_windows: usize,
    pub total_objective: f64,
    pub instances: usize,
    pub window_gmape: BTreeMap<String, f64>,
    pub interval_gmape: BTreeMap<String, f64>,
    pub min_gmqe: f64,
}

pub fn run_pipeline(cfg: &Config, out_dir: &Path) -> std::result::Result<PipelineSummary, StageError> {
    cfg.validate().stage(Stage::Config)?;
    let layout = Layout::new(out_dir);
    let level = cfg.query_level().stage(Stage::Config)?;

    let trace = load_trace(cfg).stage(Stage::Ingest)?;
    let catalog = load_base_catalog(cfg).stage(Stage::Ingest)?;
    clear_augmentation(&layout).stage(Stage::Select)?;
    let targets = run_targets(cfg, &trace, &layout).stage(Stage::Targets)?;

    let mut catalog = catalog;
    let mut bad_windows = 0;
    let mut augmented = 0;
    let (plans, schedule) = match level {
        Some(level) => {
            let out = run_query_level(cfg, level, &trace, &targets, &catalog, &layout).stage(Stage::Select)?;
            (out.0, out.1)
        }
        None => {
            let mut plans = run_select(cfg, &targets, &catalog, &layout).stage(Stage::Select)?;
            if !cfg.skip_augment {
                let provider = make_provider(cfg);
                let out = run_augment(cfg, &trace, &targets, &plans, &catalog, provider.as_ref(), &layout)
                    .stage(Stage::Augment)?;
                bad_windows = out.outcome.bad_windows.len();
                augmented = out.outcome.added.len();
                catalog = out.catalog;
                plans = out.plans;
            }
            let schedule = run_schedule(cfg, &targets, &plans, &catalog, &layout).stage(Stage::Schedule)?;
            (plans, schedule)
        }
    };
    let replayed = run_replay(cfg, &schedule, &catalog, &layout).stage(Stage::Replay)?;
    let report = run_evaluate(cfg, &targets, &replayed, &layout).stage(Stage::Evaluate)?;

    let gmape_at = |level: Level| -> BTreeMap<String, f64> {
        report
            .rows
            .iter()
            .filter(|r| r.level == level && cfg.metrics.contains(&r.dimension))
            .map(|r| (r.dimension.clone(), r.gmape))
            .collect()
    };
    let components: BTreeSet<&str> = catalog.components().iter().map(|c| c.component_id.as_str()).collect();
    Ok(PipelineSummary {
        out_dir: out_dir.to_path_buf(),
        records: trace.records.len(),
        windows: targets.windows.len(),
        components: components.len(),
        augmented_components: augmented,
        bad_windows,
        total_objective: plans.iter().map(|p| p.objective_value).sum(),
        instances: schedule.entries.len(),
        window_gmape: gmape_at(Level::Window),
        interval_gmape: gmape_at(Level::Interval),
        min_gmqe: report.rows.iter().map(|r| r.gmqe).fold(f64::INFINITY, f64::min),
    })
}

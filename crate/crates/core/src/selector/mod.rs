//! Per-window component selection.
//!
//! For window `i` the selector picks integer multiplicities `x_j` minimizing
//!
//! ```text
//! Σ_h |Σ_j x_j m'_hj − M_h| / max(M_h, ε_h)  +  Σ_u |Σ_j x_j o'_uj − O_u| / max(O_u, ε_u)
//! ```
//!
//! subject to `x_j ≤ y`, `Σ_j x_j ≤ z` and `Σ_j x_j T'_j ≤ l`. Windows are
//! independent. In time-share mode the operator terms compare the
//! duration-weighted mean share of the selection against the target share.

mod bnb;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

pub use bnb::SolverBudget;

use crate::catalog::{Catalog, WorkloadComponent};
use crate::csvio::{self, Header};
use crate::error::{Error, Result};
use crate::feature::{Normalizer, PerformanceFeature};
use crate::trace::{Targets, TraceMode, WindowTarget};

/// Cap on the total number of instances in a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TotalCap {
    Fixed(u32),
    /// A multiple of the window's original query count, rounded up, at least 1.
    QueryCountMultiple(f64),
}

impl TotalCap {
    pub fn resolve(&self, query_count: usize) -> u32 {
        match *self {
            TotalCap::Fixed(z) => z.max(1),
            TotalCap::QueryCountMultiple(k) => ((k * query_count as f64).ceil() as u32).max(1),
        }
    }
}

/// Selection settings shared by every window.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConstraints {
    /// `y`: repetitions allowed per component.
    pub max_repetitions: u32,
    /// `z`.
    pub total_cap: TotalCap,
    /// `l = window_len × max_concurrency`.
    pub max_concurrency: u32,
    /// `ε`, applied to every dimension.
    pub denominator_floor: f64,
    /// Optional per-dimension weights (metrics then operators); all 1 when unset.
    pub weights: Option<Vec<f64>>,
    pub budget: SolverBudget,
}

impl Default for SelectionConstraints {
    fn default() -> Self {
        Self {
            max_repetitions: 10,
            total_cap: TotalCap::QueryCountMultiple(2.0),
            max_concurrency: 8,
            denominator_floor: 1.0,
            weights: None,
            budget: SolverBudget::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionProblem<'a> {
    pub window_index: usize,
    pub target: PerformanceFeature,
    /// Duration weight of the target's time shares; unused in counts mode.
    pub busy_ms: f64,
    pub mode: TraceMode,
    pub components: &'a [WorkloadComponent],
    pub max_repetitions: u32,
    pub max_total: u32,
    /// `None` drops the duration constraint.
    pub duration_budget_ms: Option<f64>,
    pub denominator_floor: Vec<f64>,
    pub weights: Vec<f64>,
    pub budget: SolverBudget,
}

impl<'a> SelectionProblem<'a> {
    pub fn for_window(
        target: &WindowTarget,
        components: &'a [WorkloadComponent],
        mode: TraceMode,
        constraints: &SelectionConstraints,
    ) -> Self {
        let dims = target.feature.dims();
        Self {
            window_index: target.window_index,
            target: target.feature.clone(),
            busy_ms: target.busy_ms,
            mode,
            components,
            max_repetitions: constraints.max_repetitions,
            max_total: constraints.total_cap.resolve(target.query_count),
            duration_budget_ms: Some(target.window_len_ms as f64 * constraints.max_concurrency as f64),
            denominator_floor: vec![constraints.denominator_floor; dims],
            weights: constraints.weights.clone().unwrap_or_else(|| vec![1.0; dims]),
            budget: constraints.budget,
        }
    }

    fn validate(&self) -> Result<()> {
        let dims = self.target.dims();
        for c in self.components {
            if c.feature.metrics.len() != self.target.metrics.len()
                || c.feature.operators.len() != self.target.operators.len()
            {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    found: c.feature.dims(),
                });
            }
        }
        if self.denominator_floor.len() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: self.denominator_floor.len(),
            });
        }
        if self.weights.len() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: self.weights.len(),
            });
        }
        if self.max_repetitions < 1 || self.max_total < 1 {
            return Err(Error::Config("y and z must be at least 1".into()));
        }
        if self.denominator_floor.iter().any(|e| e.is_nan() || *e <= 0.0) {
            return Err(Error::Config("denominator floor must be positive".into()));
        }
        if self.duration_budget_ms.is_some_and(|l| l.is_nan() || l <= 0.0) {
            return Err(Error::Config("duration budget must be positive".into()));
        }
        Ok(())
    }

    /// Component indices in `component_id` order.
    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.components.len()).collect();
        idx.sort_by(|&a, &b| self.components[a].component_id.cmp(&self.components[b].component_id));
        idx
    }

    fn program(&self, order: &[usize]) -> bnb::IntegerProgram {
        let nm = self.target.metrics.len();
        let comps: Vec<&WorkloadComponent> = order.iter().map(|&i| &self.components[i]).collect();
        let mut rows = Vec::with_capacity(self.target.dims());
        for (h, &t) in self.target.metrics.iter().enumerate() {
            let den = t.max(self.denominator_floor[h]);
            let w = self.weights[h];
            rows.push(bnb::Row {
                coef: comps.iter().map(|c| w * c.feature.metrics[h] / den).collect(),
                rhs: w * t / den,
            });
        }
        for (u, &t) in self.target.operators.iter().enumerate() {
            let d = nm + u;
            let w = self.weights[d];
            let den = t.max(self.denominator_floor[d]);
            rows.push(match self.mode {
                TraceMode::Counts => bnb::Row {
                    coef: comps.iter().map(|c| w * c.feature.operators[u] / den).collect(),
                    rhs: w * t / den,
                },
                TraceMode::TimeShares => {
                    let den = den * self.busy_ms.max(1.0);
                    bnb::Row {
                        coef: comps
                            .iter()
                            .map(|c| w * c.duration_ms * (c.feature.operators[u] - t) / den)
                            .collect(),
                        rhs: 0.0,
                    }
                }
            });
        }
        let upper = comps
            .iter()
            .map(|c| {
                let mut cap = self.max_repetitions.min(self.max_total);
                if let Some(l) = self.duration_budget_ms {
                    let fit = ((l * (1.0 + 1e-12) + 1e-9) / c.duration_ms).floor();
                    cap = cap.min(fit.min(u32::MAX as f64) as u32);
                }
                cap
            })
            .collect();
        bnb::IntegerProgram {
            rows,
            upper,
            durations: comps.iter().map(|c| c.duration_ms).collect(),
            total_cap: self.max_total,
            duration_budget: self.duration_budget_ms,
        }
    }

    /// Objective value of an arbitrary count assignment.
    pub fn objective(&self, counts: &BTreeMap<String, u32>) -> Result<f64> {
        let order = self.order();
        let x = self.count_vector(&order, counts)?;
        Ok(self.program(&order).objective(&x))
    }

    /// Whether `counts` satisfies the repetition, total and duration constraints.
    pub fn is_feasible(&self, counts: &BTreeMap<String, u32>) -> Result<bool> {
        let order = self.order();
        let x = self.count_vector(&order, counts)?;
        let program = self.program(&order);
        Ok(x.iter().all(|&v| v <= self.max_repetitions)
            && x.iter().map(|&v| v as u64).sum::<u64>() <= self.max_total as u64
            && program.within_duration(&x))
    }

    pub fn achieved(&self, counts: &BTreeMap<String, u32>) -> Result<PerformanceFeature> {
        let mut metrics = vec![0.0; self.target.metrics.len()];
        let mut ops = vec![0.0; self.target.operators.len()];
        let mut weight = 0.0;
        for (id, &k) in counts {
            let c = self
                .components
                .iter()
                .find(|c| &c.component_id == id)
                .ok_or_else(|| Error::UnknownComponent(id.clone()))?;
            let k = k as f64;
            for (m, v) in metrics.iter_mut().zip(&c.feature.metrics) {
                *m += k * v;
            }
            let scale = match self.mode {
                TraceMode::Counts => k,
                TraceMode::TimeShares => k * c.duration_ms,
            };
            weight += k * c.duration_ms;
            for (o, v) in ops.iter_mut().zip(&c.feature.operators) {
                *o += scale * v;
            }
        }
        if self.mode == TraceMode::TimeShares && weight > 0.0 {
            ops.iter_mut().for_each(|o| *o /= weight);
        }
        Ok(PerformanceFeature::new(metrics, ops))
    }

    fn count_vector(&self, order: &[usize], counts: &BTreeMap<String, u32>) -> Result<Vec<u32>> {
        for id in counts.keys() {
            if !self.components.iter().any(|c| &c.component_id == id) {
                return Err(Error::UnknownComponent(id.clone()));
            }
        }
        Ok(order
            .iter()
            .map(|&i| counts.get(&self.components[i].component_id).copied().unwrap_or(0))
            .collect())
    }

    fn plan_from(&self, order: &[usize], x: &[u32], objective: f64, approximate: bool) -> Result<SelectionPlan> {
        let counts: BTreeMap<String, u32> = order
            .iter()
            .zip(x)
            .filter(|(_, &k)| k > 0)
            .map(|(&i, &k)| (self.components[i].component_id.clone(), k))
            .collect();
        Ok(SelectionPlan {
            window_index: self.window_index,
            achieved: self.achieved(&counts)?,
            counts,
            objective_value: objective,
            approximate,
        })
    }
}

/// Chosen multiplicities for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPlan {
    pub window_index: usize,
    /// Nonzero multiplicities by component id.
    pub counts: BTreeMap<String, u32>,
    pub achieved: PerformanceFeature,
    pub objective_value: f64,
    /// Set when the solver budget ran out before optimality was proven.
    pub approximate: bool,
}

impl SelectionPlan {
    pub fn total_instances(&self) -> u32 {
        self.counts.values().sum()
    }
}

pub fn solve_window(problem: &SelectionProblem) -> Result<SelectionPlan> {
    solve_window_from(problem, None)
}

/// Like [`solve_window`], seeding the search with `warm` when it is feasible.
/// The result is never worse than the warm start.
pub fn solve_window_from(problem: &SelectionProblem, warm: Option<&BTreeMap<String, u32>>) -> Result<SelectionPlan> {
    problem.validate()?;
    let order = problem.order();
    let program = problem.program(&order);
    let warm_x = match warm {
        Some(counts) => {
            let known: BTreeMap<String, u32> = counts
                .iter()
                .filter(|(id, _)| problem.components.iter().any(|c| &c.component_id == *id))
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            (known.len() == counts.len()).then(|| problem.count_vector(&order, &known)).transpose()?
        }
        None => None,
    };
    let out = bnb::solve(&program, &problem.budget, warm_x.as_deref());
    if !program.feasible(&out.x) {
        return Err(Error::Solver {
            window: Some(problem.window_index),
            message: "solver returned an infeasible assignment".into(),
        });
    }
    log::debug!(
        "window {}: objective {:.6} after {} nodes{}",
        problem.window_index,
        out.objective,
        out.nodes,
        if out.approximate { " (budget hit)" } else { "" }
    );
    problem.plan_from(&order, &out.x, out.objective, out.approximate)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

pub(crate) fn run_parallel<T: Send, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    pool(jobs)?.install(|| (0..n).into_par_iter().map(f).collect())
}

/// Solves every window independently. `warm` optionally supplies previous plans
/// (indexed by window) as starting incumbents.
pub fn solve_all_windows(
    targets: &Targets,
    catalog: &Catalog,
    constraints: &SelectionConstraints,
    jobs: usize,
    warm: Option<&[SelectionPlan]>,
) -> Result<Vec<SelectionPlan>> {
    run_parallel(jobs, targets.windows.len(), |w| {
        let target = &targets.windows[w];
        let problem = SelectionProblem::for_window(target, catalog.components(), targets.mode, constraints);
        let start = warm.and_then(|p| p.get(w)).map(|p| &p.counts);
        solve_window_from(&problem, start).map_err(|e| match e {
            Error::Solver { message, .. } => Error::Solver {
                window: Some(w),
                message,
            },
            other => Error::Solver {
                window: Some(w),
                message: other.to_string(),
            },
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryLevel {
    /// Nearest single component by Euclidean distance on z-normalized features.
    OneToOne,
    /// Selection with the query as target and a total-count cap.
    OneToMany,
}

impl std::str::FromStr for QueryLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_to_one" => Ok(QueryLevel::OneToOne),
            "one_to_many" => Ok(QueryLevel::OneToMany),
            other => Err(Error::Config(format!("unknown query level {other:?}"))),
        }
    }
}

/// Fits one original query. The returned plan carries `window_index` unchanged;
/// instances are meant to be dispatched at the query's own arrival time.
#[allow(clippy::too_many_arguments)]
pub fn match_query(
    window_index: usize,
    query: &PerformanceFeature,
    query_duration_ms: f64,
    catalog: &Catalog,
    mode: TraceMode,
    level: QueryLevel,
    max_total: u32,
    constraints: &SelectionConstraints,
) -> Result<SelectionPlan> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let dims = query.dims();
    let problem = SelectionProblem {
        window_index,
        target: query.clone(),
        busy_ms: query_duration_ms,
        mode,
        components: catalog.components(),
        max_repetitions: constraints.max_repetitions,
        max_total: max_total.max(1),
        duration_budget_ms: None,
        denominator_floor: vec![constraints.denominator_floor; dims],
        weights: constraints.weights.clone().unwrap_or_else(|| vec![1.0; dims]),
        budget: constraints.budget,
    };
    problem.validate()?;
    let nearest = nearest_component(query, catalog)?;
    let single: BTreeMap<String, u32> = [(nearest.0.clone(), 1)].into_iter().collect();
    match level {
        QueryLevel::OneToOne => {
            let objective = problem.objective(&single)?;
            Ok(SelectionPlan {
                window_index,
                achieved: problem.achieved(&single)?,
                counts: single,
                objective_value: objective,
                approximate: false,
            })
        }
        QueryLevel::OneToMany => solve_window_from(&problem, Some(&single)),
    }
}

/// Closest component on z-normalized features; ties go to the smaller id.
pub fn nearest_component(query: &PerformanceFeature, catalog: &Catalog) -> Result<(String, f64)> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let points: Vec<Vec<f64>> = catalog.components().iter().map(|c| c.feature.to_vec()).collect();
    let norm = Normalizer::fit(points.iter().map(Vec::as_slice));
    let q = norm.normalize(&query.to_vec());
    let mut best: Option<(String, f64)> = None;
    for (c, p) in catalog.components().iter().zip(&points) {
        let d = crate::feature::euclidean(&q, &norm.normalize(p));
        let better = match &best {
            None => true,
            Some((id, bd)) => d < *bd || (d == *bd && c.component_id < *id),
        };
        if better {
            best = Some((c.component_id.clone(), d));
        }
    }
    Ok(best.unwrap())
}

pub fn write_plans(plans: &[SelectionPlan], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csvio::writer(path)?;
    w.write_record(["window_index", "component_id", "count"])?;
    for p in plans {
        for (id, k) in &p.counts {
            w.write_record([p.window_index.to_string(), id.clone(), k.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads plan counts grouped by window, `n_windows` entries long.
pub fn read_plan_counts(path: impl AsRef<Path>, n_windows: usize) -> Result<Vec<BTreeMap<String, u32>>> {
    let mut rdr = csvio::reader(path.as_ref())?;
    let h = Header::new(rdr.headers()?);
    let (wc, cc, kc) = (h.require("window_index")?, h.require("component_id")?, h.require("count")?);
    let mut out = vec![BTreeMap::new(); n_windows];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let w: usize = csvio::parse(&rec, wc, row, "window_index")?;
        let k: u32 = csvio::parse(&rec, kc, row, "count")?;
        let slot = out.get_mut(w).ok_or_else(|| Error::Validation {
            row,
            message: format!("window {w} outside the {n_windows}-window grid"),
        })?;
        *slot.entry(csvio::field(&rec, cc).to_string()).or_insert(0) += k;
    }
    Ok(out)
}

/// Rebuilds plans from stored counts, re-evaluating achieved features and objectives.
pub fn plans_from_counts(
    counts: Vec<BTreeMap<String, u32>>,
    targets: &Targets,
    catalog: &Catalog,
    constraints: &SelectionConstraints,
) -> Result<Vec<SelectionPlan>> {
    counts
        .into_iter()
        .enumerate()
        .map(|(w, counts)| {
            let problem = SelectionProblem::for_window(&targets.windows[w], catalog.components(), targets.mode, constraints);
            Ok(SelectionPlan {
                window_index: w,
                achieved: problem.achieved(&counts)?,
                objective_value: problem.objective(&counts)?,
                counts,
                approximate: false,
            })
        })
        .collect()
}

/// Per-window objective plus per-dimension target, achieved and relative error.
pub fn write_summary(
    plans: &[SelectionPlan],
    targets: &Targets,
    constraints: &SelectionConstraints,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csvio::writer(path)?;
    w.write_record(["window_index", "objective", "approximate", "dimension", "target", "achieved", "error"])?;
    for p in plans {
        let t = &targets.windows[p.window_index].feature;
        for ((name, tv), av) in targets.schema.names().zip(t.values()).zip(p.achieved.values()) {
            let err = (av - tv).abs() / tv.max(constraints.denominator_floor);
            w.write_record([
                p.window_index.to_string(),
                csvio::fmt_f64(p.objective_value),
                p.approximate.to_string(),
                name.to_string(),
                csvio::fmt_f64(tv),
                csvio::fmt_f64(av),
                csvio::fmt_f64(err),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

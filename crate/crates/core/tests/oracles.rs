//! Module outputs checked against independently computed values.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use rand::Rng;
use wlsynth_core::augmenter::{
    self, build_prompt, find_generation_targets, retrieve_examples, AugmentConfig, DatabaseRegistry, GenerationTarget,
    HintRound, MockPolicy, MockProvider, Provider, ScenarioId, WindowQuery,
};
use wlsynth_core::catalog::{self, load_catalog, profile_component, Origin, SimulatedExecutor};
use wlsynth_core::metrics::{self, Level, DEFAULT_EPS};
use wlsynth_core::scheduler::{self, SaConfig, Schedule, ScheduleEntry, Temperature};
use wlsynth_core::selector::{self, QueryLevel, SelectionConstraints, SelectionPlan, SelectionProblem, SolverBudget};
use wlsynth_core::simulator::replay;
use wlsynth_core::trace::{read_trace, AggregationSpec, QueryRecord, Trace, TraceMode};
use wlsynth_core::{build_targets, Catalog, PerformanceFeature, TimeGrid};

fn random_schedule(r: &mut impl Rng, catalog: &Catalog, n: usize, span_ms: i64) -> Schedule {
    let ids: Vec<&str> = catalog.components().iter().map(|c| c.component_id.as_str()).collect();
    Schedule {
        entries: (0..n)
            .map(|i| ScheduleEntry {
                window_index: 0,
                component_id: ids[r.random_range(0..ids.len())].to_string(),
                instance_index: i as u32,
                start_ts: EPOCH + r.random_range(0..span_ms),
            })
            .collect(),
    }
}

fn csv_bytes(trace: &Trace) -> Vec<u8> {
    let mut out = Vec::new();
    trace.write_csv(&mut out).unwrap();
    out
}

// ---- trace ----

#[test]
fn ten_thousand_row_export_round_trip() {
    let mut r = rng(101);
    let catalog = random_catalog(&mut r, 20, "t");
    let schedule = random_schedule(&mut r, &catalog, 10_000, 100_000_000);
    let trace = replay(&schedule, &catalog, 8).unwrap().into_trace(&catalog, TraceMode::Counts);
    let bytes = csv_bytes(&trace);
    let back = read_trace(bytes.as_slice(), &schema(), TraceMode::Counts).unwrap();
    assert_eq!(back.records.len(), 10_000);
    assert_eq!(back.records, trace.records);
    assert_eq!(csv_bytes(&back), bytes);
}

#[test]
fn interval_mass_matches_millisecond_accumulation() {
    let mut r = rng(102);
    let records: Vec<QueryRecord> = (0..50)
        .map(|i| QueryRecord {
            query_id: format!("q{i}"),
            arrival_ts: EPOCH + r.random_range(-20_000..120_000),
            duration_ms: if i % 7 == 0 { 0 } else { r.random_range(1..50_000) },
            metrics: vec![r.random_range(1.0..1e4), r.random_range(1e6..1e9)],
            operators: vec![1.0, 0.0, 2.0],
        })
        .collect();
    let trace = Trace {
        schema: schema(),
        mode: TraceMode::Counts,
        records,
    };
    let spec = AggregationSpec {
        window_len_ms: 60_000,
        interval_len_ms: 10_000,
        span: Some((EPOCH, 2)),
    };
    let targets = build_targets(&trace, &spec).unwrap();
    let expected = millisecond_accumulate(&trace.records, EPOCH, 10_000, 12, 2);
    assert_eq!(targets.intervals.len(), 12);
    for (g, it) in targets.intervals.iter().enumerate() {
        for d in 0..2 {
            let want = expected[g * 2 + d];
            assert!(
                relative_close(it.metrics[d], want, 1e-9),
                "interval {g} dim {d}: {} vs {want}",
                it.metrics[d]
            );
        }
    }
}

#[test]
fn mass_inside_the_span_is_conserved() {
    let mut r = rng(103);
    let records: Vec<QueryRecord> = (0..200)
        .map(|i| {
            let arrival = r.random_range(0..500_000);
            QueryRecord {
                query_id: format!("q{i}"),
                arrival_ts: EPOCH + arrival,
                duration_ms: r.random_range(0..(600_000 - arrival) as u64),
                metrics: vec![r.random_range(1.0..1e4), r.random_range(1e6..1e9)],
                operators: vec![0.0; 3],
            }
        })
        .collect();
    let trace = Trace {
        schema: schema(),
        mode: TraceMode::Counts,
        records,
    };
    let spec = AggregationSpec {
        span: Some((EPOCH, 2)),
        ..AggregationSpec::default()
    };
    let targets = build_targets(&trace, &spec).unwrap();
    for d in 0..2 {
        let total: f64 = trace.records.iter().map(|q| q.metrics[d]).sum();
        let intervals: f64 = targets.intervals.iter().map(|i| i.metrics[d]).sum();
        let windows: f64 = targets.windows.iter().map(|w| w.feature.metrics[d]).sum();
        assert!(relative_close(intervals, total, 1e-9), "dim {d}: intervals {intervals} vs {total}");
        assert!(relative_close(windows, total, 1e-9), "dim {d}: windows {windows} vs {total}");
    }
}

// ---- catalog ----

#[test]
fn catalog_export_reload_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(201);
    let mut catalog = random_catalog(&mut r, 30, "k");
    let mut extra = catalog.components()[3].clone();
    extra.component_id = "aug-extra".into();
    extra.origin = Origin::Augmented;
    catalog.insert(extra).unwrap();

    let path = dir.path().join("catalog.csv");
    catalog.write_csv(&path, true).unwrap();
    let back = load_catalog(&path, &schema()).unwrap();
    assert_eq!(back.components(), catalog.components());
    let again = dir.path().join("again.csv");
    back.write_csv(&again, true).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn noisy_profiles_stay_within_three_standard_errors() {
    const SIGMA: f64 = 0.05;
    const RUNS: usize = 3;
    let mut r = rng(202);
    let truth = random_catalog(&mut r, 20, "p");
    let mut executor = SimulatedExecutor::new(schema()).with_noise(17, SIGMA);
    for c in truth.components() {
        executor.insert(
            &c.query_ref,
            &c.database,
            catalog::Execution {
                duration_ms: c.duration_ms,
                feature: c.feature.clone(),
            },
        );
    }
    let bound = 3.0 * SIGMA / (RUNS as f64).sqrt();
    let (mut inside, mut total) = (0, 0);
    for c in truth.components() {
        let mut measured = c.clone();
        profile_component(&mut measured, &executor, RUNS).unwrap();
        let pairs = std::iter::once((measured.duration_ms, c.duration_ms))
            .chain(measured.feature.metrics.iter().copied().zip(c.feature.metrics.iter().copied()));
        for (got, want) in pairs {
            total += 1;
            if (got - want).abs() <= bound * want {
                inside += 1;
            }
        }
        assert_eq!(measured.feature.operators, c.feature.operators);
        let (lo, hi) = measured.duration_range.unwrap();
        assert!(lo <= measured.duration_ms && measured.duration_ms <= hi);
    }
    assert!(inside as f64 >= 0.95 * total as f64, "{inside}/{total} within 3 standard errors");
}

// ---- selector ----

fn small_problem(components: &[wlsynth_core::WorkloadComponent], target: PerformanceFeature) -> SelectionProblem<'_> {
    let dims = target.dims();
    SelectionProblem {
        window_index: 0,
        target,
        busy_ms: 0.0,
        mode: TraceMode::Counts,
        components,
        max_repetitions: 3,
        max_total: 8,
        duration_budget_ms: None,
        denominator_floor: vec![1.0; dims],
        weights: vec![1.0; dims],
        budget: SolverBudget::default(),
    }
}

#[test]
fn five_component_instances_match_enumeration() {
    let mut r = rng(301);
    for case in 0..20 {
        let catalog = random_catalog(&mut r, 5, "s");
        let mut target = PerformanceFeature::new(vec![0.0; 2], vec![0.0; 3]);
        for c in catalog.components() {
            target.add_scaled(&c.feature, r.random_range(0..4) as f64 * r.random_range(0.7..1.3));
        }
        let problem = small_problem(catalog.components(), target);
        let plan = selector::solve_window(&problem).unwrap();
        let x = counts_vector(&problem, &plan.counts);
        let (best, _) = enumerate(&problem, 1e-9);
        assert!(direct_feasible(&problem, &x), "case {case}: infeasible {x:?}");
        let got = direct_objective(&problem, &x);
        assert!((got - best).abs() <= 1e-9 * best.max(1.0), "case {case}: {got} vs enumerated {best}");
        assert!((plan.objective_value - got).abs() <= 1e-9 * got.max(1.0));
    }
}

#[test]
fn planted_windows_are_reproduced_exactly() {
    let p = planted(303, 10, 12, 8);
    let spec = AggregationSpec {
        span: Some((EPOCH, 12)),
        ..AggregationSpec::default()
    };
    let targets = build_targets(&p.trace, &spec).unwrap();
    let plans = selector::solve_all_windows(&targets, &p.catalog, &SelectionConstraints::default(), 4, None).unwrap();
    for (w, plan) in plans.iter().enumerate() {
        assert!(plan.objective_value <= 1e-9, "window {w}: objective {}", plan.objective_value);
        let target = &targets.windows[w].feature;
        for (a, t) in plan.achieved.values().zip(target.values()) {
            assert!((a - t).abs() <= 1e-9 * t.max(1.0), "window {w}: achieved {a} vs {t}");
        }
    }
}

#[test]
fn exact_duplicate_is_matched_at_distance_zero() {
    let mut r = rng(304);
    let catalog = random_catalog(&mut r, 15, "d");
    for c in catalog.components() {
        let (id, distance) = selector::nearest_component(&c.feature, &catalog).unwrap();
        assert_eq!(id, c.component_id);
        assert_eq!(distance, 0.0);
        let plan = selector::match_query(
            0,
            &c.feature,
            c.duration_ms,
            &catalog,
            TraceMode::Counts,
            QueryLevel::OneToOne,
            1,
            &SelectionConstraints::default(),
        )
        .unwrap();
        assert_eq!(plan.objective_value, 0.0);
        assert_eq!(plan.counts, BTreeMap::from([(c.component_id.clone(), 1)]));
    }
}

#[test]
fn one_to_many_fits_the_trace_at_least_as_well_as_one_to_one() {
    let mut r = rng(305);
    let catalog = random_catalog(&mut r, 10, "m");
    let comps = catalog.components();
    let constraints = SelectionConstraints::default();
    let (mut targets, mut one, mut many) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..100 {
        let mut feature = PerformanceFeature::new(vec![0.0; 2], vec![0.0; 3]);
        for _ in 0..r.random_range(1..=3) {
            feature.add_scaled(&comps[r.random_range(0..comps.len())].feature, 1.0);
        }
        for m in feature.metrics.iter_mut() {
            *m = (*m * r.random_range(0.8..1.2)).round();
        }
        for (level, out) in [(QueryLevel::OneToOne, &mut one), (QueryLevel::OneToMany, &mut many)] {
            let plan =
                selector::match_query(i, &feature, 10_000.0, &catalog, TraceMode::Counts, level, 3, &constraints).unwrap();
            out.extend(plan.achieved.to_vec());
        }
        targets.extend(feature.to_vec());
    }
    let g_one = metrics::gmape(&targets, &one, DEFAULT_EPS).unwrap();
    let g_many = metrics::gmape(&targets, &many, DEFAULT_EPS).unwrap();
    assert!(g_many <= g_one, "one_to_many {g_many} vs one_to_one {g_one}");
}

// ---- scheduler ----

fn single_metric_catalog(jobs: &[(&str, f64)]) -> Catalog {
    catalog_of(
        &schema(),
        jobs.iter()
            .map(|(id, w)| component(id, *w, vec![*w, 1.0], vec![0.0; 3]))
            .collect(),
    )
}

fn entry(id: &str, start: i64) -> ScheduleEntry {
    ScheduleEntry {
        window_index: 0,
        component_id: id.into(),
        instance_index: 0,
        start_ts: start,
    }
}

#[test]
fn eight_identical_jobs_on_four_cores_finish_together() {
    let ids: Vec<String> = (0..8).map(|i| format!("j{i}")).collect();
    let catalog = single_metric_catalog(&ids.iter().map(|id| (id.as_str(), 30_000.0)).collect::<Vec<_>>());
    let schedule = Schedule {
        entries: ids.iter().map(|id| entry(id, 0)).collect(),
    };
    let out = replay(&schedule, &catalog, 4).unwrap();
    for (c, rec) in out.completions_ms.iter().zip(&out.records) {
        assert!((c - 60_000.0).abs() <= 1e-6, "completion {c}");
        assert_eq!(rec.duration_ms, 60_000);
    }
}

#[test]
fn staggered_arrivals_share_one_core() {
    // a alone for 2 s, then three-way sharing until b and c finish at 5 s,
    // then a alone again with 7 s of work left
    let catalog = single_metric_catalog(&[("a", 10_000.0), ("b", 1_000.0), ("c", 1_000.0)]);
    let schedule = Schedule {
        entries: vec![entry("a", 0), entry("b", 2_000), entry("c", 2_000)],
    };
    let out = replay(&schedule, &catalog, 1).unwrap();
    let want = [12_000.0, 5_000.0, 5_000.0];
    for (got, want) in out.completions_ms.iter().zip(want) {
        assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
    }
    let durations: Vec<u64> = out.records.iter().map(|q| q.duration_ms).collect();
    assert_eq!(durations, vec![12_000, 3_000, 3_000]);
}

#[test]
fn energy_matches_independent_recomputation() {
    let mut r = rng(403);
    for case in 0..20 {
        let catalog = random_catalog(&mut r, 6, "e");
        let n = r.random_range(1..15);
        let schedule = random_schedule(&mut r, &catalog, n, 280_000);
        let grid = TimeGrid::new(EPOCH, WINDOW_MS, 30_000, 1).unwrap();
        let targets: Vec<_> = (0..10)
            .map(|g| wlsynth_core::trace::IntervalTarget {
                window_index: 0,
                interval_index: g,
                interval_start_ts: grid.interval_start(g),
                interval_len_ms: 30_000,
                metrics: vec![r.random_range(0.0..5e4), r.random_range(0.0..1e9)],
            })
            .collect();
        let cores = r.random_range(1..=8);
        let got = scheduler::energy(&schedule, &targets, &catalog, cores, 1.0).unwrap();

        let records = replay(&schedule, &catalog, cores).unwrap().records;
        let achieved = millisecond_accumulate(&records, EPOCH, 30_000, 10, 2);
        let want: f64 = targets
            .iter()
            .enumerate()
            .flat_map(|(g, t)| (0..2).map(move |d| (g, d, t.metrics[d])))
            .map(|(g, d, t)| (achieved[g * 2 + d] - t).abs() / t.max(1.0))
            .sum();
        assert!(relative_close(got, want, 1e-9), "case {case}: energy {got} vs {want}");
    }
}

fn one_window_plan(counts: &[(&str, u32)], catalog: &Catalog) -> SelectionPlan {
    let counts: BTreeMap<String, u32> = counts.iter().map(|(id, k)| (id.to_string(), *k)).collect();
    let mut achieved = PerformanceFeature::new(vec![0.0; 2], vec![0.0; 3]);
    for (id, k) in &counts {
        achieved.add_scaled(&catalog.get(id).unwrap().feature, *k as f64);
    }
    SelectionPlan {
        window_index: 0,
        counts,
        achieved,
        objective_value: 0.0,
        approximate: false,
    }
}

fn one_window_targets(schedule: &Schedule, catalog: &Catalog, cores: u32) -> wlsynth_core::Targets {
    let trace = replay(schedule, catalog, cores).unwrap().into_trace(catalog, TraceMode::Counts);
    let spec = AggregationSpec {
        span: Some((EPOCH, 1)),
        ..AggregationSpec::default()
    };
    build_targets(&trace, &spec).unwrap()
}

#[test]
fn single_planted_instance_anneals_to_zero_energy() {
    let catalog = single_metric_catalog(&[("a", 10_000.0)]);
    let planted = Schedule {
        entries: vec![entry("a", EPOCH + 95_000)],
    };
    let targets = one_window_targets(&planted, &catalog, 8);
    let plan = one_window_plan(&[("a", 1)], &catalog);
    let cfg = SaConfig {
        no_improve_steps: 20_000,
        ..SaConfig::default()
    };
    let out = scheduler::assign_timestamps(&[plan], &targets, &catalog, &cfg, 5, 1).unwrap();
    let report = &out.reports[0];
    assert!(report.final_energy <= 1e-12, "final energy {}", report.final_energy);
    assert!(report.steps <= cfg.max_steps);
    let recomputed = scheduler::energy(&out.schedule, targets.window_intervals(0), &catalog, 8, 1.0).unwrap();
    assert!(recomputed <= 1e-12);
}

fn annealing_fixture() -> (Catalog, wlsynth_core::Targets, SelectionPlan) {
    let mut r = rng(405);
    let catalog = random_catalog(&mut r, 5, "h");
    let ids: Vec<String> = catalog.components().iter().map(|c| c.component_id.clone()).collect();
    let mut entries = Vec::new();
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    for _ in 0..8 {
        let id = &ids[r.random_range(0..ids.len())];
        let k = counts.entry(id.clone()).or_default();
        entries.push(ScheduleEntry {
            window_index: 0,
            component_id: id.clone(),
            instance_index: *k,
            start_ts: EPOCH + r.random_range(0..240) * 1000,
        });
        *k += 1;
    }
    let targets = one_window_targets(&Schedule { entries }, &catalog, 4);
    let counts: Vec<(&str, u32)> = counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let plan = one_window_plan(&counts, &catalog);
    (catalog, targets, plan)
}

#[test]
fn zero_temperature_only_accepts_downhill_moves() {
    let (catalog, targets, plan) = annealing_fixture();
    let cfg = SaConfig {
        temperature: Temperature::Fixed { max: 1e-300, min: 1e-300 },
        cores: 4,
        ..SaConfig::default()
    };
    let out = scheduler::assign_timestamps(&[plan], &targets, &catalog, &cfg, 9, 1).unwrap();
    let report = &out.reports[0];
    assert!(!report.accepted_history.is_empty());
    for w in report.accepted_history.windows(2) {
        assert!(w[1] <= w[0], "accepted an uphill move: {} -> {}", w[0], w[1]);
    }
    assert!(report.final_energy <= report.initial_energy);
}

#[test]
fn same_seed_same_schedule() {
    let (catalog, targets, plan) = annealing_fixture();
    let cfg = SaConfig {
        cores: 4,
        ..SaConfig::default()
    };
    let plans = [plan];
    let run = |seed| scheduler::assign_timestamps(&plans, &targets, &catalog, &cfg, seed, 1).unwrap();
    let (a, b, c) = (run(21), run(21), run(22));
    assert_eq!(a, b);
    assert_ne!(a.schedule, c.schedule);
}

// ---- simulator ----

#[test]
fn replayed_trace_aggregates_to_the_estimate() {
    let mut r = rng(501);
    let catalog = random_catalog(&mut r, 12, "r");
    let schedule = random_schedule(&mut r, &catalog, 120, 3 * WINDOW_MS as i64);
    let grid = TimeGrid::new(EPOCH, WINDOW_MS, 30_000, 4).unwrap();
    let estimate = scheduler::estimate_interval_features(&schedule, &catalog, &grid, 4).unwrap();

    let trace = replay(&schedule, &catalog, 4).unwrap().into_trace(&catalog, TraceMode::Counts);
    let ingested = read_trace(csv_bytes(&trace).as_slice(), &schema(), TraceMode::Counts).unwrap();
    let targets = build_targets(&ingested, &AggregationSpec::on_grid(&grid)).unwrap();
    assert_eq!(targets.intervals.len(), estimate.len());
    for (t, e) in targets.intervals.iter().zip(&estimate) {
        assert_eq!(t.interval_start_ts, e.interval_start_ts);
        for (a, b) in t.metrics.iter().zip(&e.metrics) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "interval at {}: {a} vs {b}", t.interval_start_ts);
        }
    }
}

// ---- metrics ----

#[test]
fn metrics_match_product_form_on_random_series() {
    let mut r = rng(601);
    let t: Vec<f64> = (0..1000).map(|_| r.random_range(1.0..1e6)).collect();
    let a: Vec<f64> = t.iter().map(|v| v * r.random_range(0.5..2.0)).collect();
    let pairs = [
        (metrics::mae(&t, &a).unwrap(), reference::mae(&t, &a)),
        (metrics::gmape(&t, &a, DEFAULT_EPS).unwrap(), reference::gmape(&t, &a, DEFAULT_EPS)),
        (metrics::gmqe(&t, &a, DEFAULT_EPS).unwrap(), reference::gmqe(&t, &a, DEFAULT_EPS)),
    ];
    for (got, want) in pairs {
        assert!(relative_close(got, want, 1e-9), "{got} vs {want}");
    }
}

#[test]
fn ten_percent_inflation_reads_as_ten_percent() {
    let mut r = rng(602);
    let mut records = vec![QueryRecord {
        query_id: "base".into(),
        arrival_ts: EPOCH,
        duration_ms: 2 * WINDOW_MS,
        metrics: vec![6_000.0, 6e8],
        operators: vec![1.0, 1.0, 1.0],
    }];
    for i in 0..40 {
        records.push(QueryRecord {
            query_id: format!("q{i}"),
            arrival_ts: EPOCH + r.random_range(0..500_000),
            duration_ms: r.random_range(0..90_000),
            metrics: vec![r.random_range(1.0..1e4), r.random_range(1e6..1e9)],
            operators: vec![2.0, 0.0, 1.0],
        });
    }
    let trace = Trace {
        schema: schema(),
        mode: TraceMode::Counts,
        records,
    };
    let mut inflated = trace.clone();
    for q in inflated.records.iter_mut() {
        q.metrics[0] *= 1.1;
    }
    let spec = AggregationSpec {
        span: Some((EPOCH, 2)),
        ..AggregationSpec::default()
    };
    let targets = build_targets(&trace, &spec).unwrap();
    let report = metrics::report(&targets, &inflated, DEFAULT_EPS).unwrap();
    for level in [Level::Window, Level::Interval] {
        let cpu = report.get(level, "cpu_time_ms").unwrap();
        assert!((cpu.gmape - 0.10).abs() <= 1e-9, "{level:?} GMAPE {}", cpu.gmape);
        assert!((cpu.gmqe - 1.10).abs() <= 1e-9, "{level:?} GMQE {}", cpu.gmqe);
        let sb = report.get(level, "scanned_bytes").unwrap();
        assert_eq!((sb.mae, sb.gmape, sb.gmqe), (0.0, 0.0, 1.0));
    }
    let joins = report.get(Level::Window, "join_num").unwrap();
    assert_eq!((joins.mae, joins.gmape, joins.gmqe), (0.0, 0.0, 1.0));
}

#[test]
fn symmetry_of_the_metrics() {
    let mut r = rng(603);
    let t: Vec<f64> = (0..100).map(|_| r.random_range(1.0..1e3)).collect();
    let a: Vec<f64> = (0..100).map(|_| r.random_range(1.0..1e3)).collect();
    let gmqe = |x: &[f64], y: &[f64]| metrics::gmqe(x, y, DEFAULT_EPS).unwrap();
    assert!(relative_close(gmqe(&t, &a), gmqe(&a, &t), 1e-12));
    assert!(relative_close(metrics::mae(&t, &a).unwrap(), metrics::mae(&a, &t).unwrap(), 1e-12));
    // GMAPE divides by the target, so swapping roles changes it
    let up = metrics::gmape(&[10.0], &[15.0], DEFAULT_EPS).unwrap();
    let down = metrics::gmape(&[15.0], &[10.0], DEFAULT_EPS).unwrap();
    assert!((up - 0.5).abs() < 1e-12);
    assert!((down - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn relative_metrics_ignore_units() {
    let mut r = rng(604);
    let t: Vec<f64> = (0..200).map(|_| r.random_range(1.0..1e3)).collect();
    let a: Vec<f64> = (0..200).map(|_| r.random_range(1.0..1e3)).collect();
    for c in [1e-3, 7.0, 1e6] {
        let (tc, ac): (Vec<f64>, Vec<f64>) = t.iter().zip(&a).map(|(x, y)| (x * c, y * c)).unzip();
        let gmape = |x: &[f64], y: &[f64]| metrics::gmape(x, y, 0.0).unwrap();
        let gmqe = |x: &[f64], y: &[f64]| metrics::gmqe(x, y, 0.0).unwrap();
        assert!(relative_close(gmape(&tc, &ac), gmape(&t, &a), 1e-9));
        assert!(relative_close(gmqe(&tc, &ac), gmqe(&t, &a), 1e-9));
        assert!(relative_close(metrics::mae(&tc, &ac).unwrap(), c * metrics::mae(&t, &a).unwrap(), 1e-9));
    }
}

#[test]
fn million_point_series_neither_overflow_nor_underflow() {
    let mut r = rng(605);
    let t: Vec<f64> = (0..1_000_000).map(|_| 10f64.powf(r.random_range(-6.0..12.0))).collect();
    let doubled: Vec<f64> = t.iter().map(|v| v * 2.0).collect();
    let gmape = metrics::gmape(&t, &doubled, DEFAULT_EPS).unwrap();
    let gmqe = metrics::gmqe(&t, &doubled, DEFAULT_EPS).unwrap();
    assert!((gmape - 1.0).abs() <= 1e-9, "{gmape}");
    assert!((gmqe - 2.0).abs() <= 1e-9, "{gmqe}");
    assert!(metrics::mae(&t, &doubled).unwrap().is_finite());
}

#[test]
fn identical_series_score_perfectly() {
    let t = [0.0, 1.0, 1e-12, 5e9];
    assert_eq!(metrics::mae(&t, &t).unwrap(), 0.0);
    assert_eq!(metrics::gmape(&t, &t, DEFAULT_EPS).unwrap(), 0.0);
    assert_eq!(metrics::gmqe(&t, &t, DEFAULT_EPS).unwrap(), 1.0);
}

// ---- augmenter ----

fn record(id: String, duration_ms: u64, metrics: Vec<f64>, operators: Vec<f64>) -> QueryRecord {
    QueryRecord {
        query_id: id,
        arrival_ts: EPOCH,
        duration_ms,
        metrics,
        operators,
    }
}

#[test]
fn two_blobs_give_their_means() {
    let mut r = rng(701);
    let mut records = Vec::new();
    for i in 0..40 {
        let (cpu, sb, op) = if i % 2 == 0 { (100.0, 1e6, 1.0) } else { (1e5, 1e9, 8.0) };
        let j = |r: &mut rand_chacha::ChaCha8Rng| r.random_range(0.95..1.05);
        records.push(record(
            format!("q{i}"),
            1_000,
            vec![cpu * j(&mut r), sb * j(&mut r)],
            vec![op, op, (op * j(&mut r)).round()],
        ));
    }
    let queries: Vec<WindowQuery> = records.iter().map(|q| WindowQuery { window_index: 0, record: q }).collect();
    let targets = find_generation_targets(&queries, 2, 3).unwrap();
    assert_eq!(targets.len(), 2);
    for parity in 0..2 {
        let members: Vec<Vec<f64>> = records.iter().skip(parity).step_by(2).map(|q| q.feature().to_vec()).collect();
        let mean: Vec<f64> = (0..5)
            .map(|d| members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64)
            .collect();
        let found = targets
            .iter()
            .find(|t| relative_close(t.feature.metrics[0], mean[0], 1e-6))
            .unwrap_or_else(|| panic!("no centroid near blob {parity}"));
        for (got, want) in found.feature.values().zip(&mean) {
            assert!(relative_close(got, *want, 1e-6), "blob {parity}: {got} vs {want}");
        }
        assert_eq!(found.weight, 20);
    }
}

#[test]
fn retrieval_matches_a_sorted_distance_table() {
    let mut r = rng(702);
    let catalog = random_catalog(&mut r, 50, "x");
    let target = catalog.components()[7].feature.scaled(1.3);
    let points: Vec<Vec<f64>> = catalog.components().iter().map(|c| c.feature.to_vec()).collect();
    let dims = points[0].len();
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..dims).map(|d| points.iter().map(|p| p[d]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..dims)
        .map(|d| {
            let s = (points.iter().map(|p| (p[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let z = |p: &[f64]| -> Vec<f64> { (0..dims).map(|d| (p[d] - mean[d]) / std[d]).collect() };
    let tz = z(&target.to_vec());
    let mut table: Vec<(f64, String)> = catalog
        .components()
        .iter()
        .zip(&points)
        .map(|(c, p)| {
            let d = z(p).iter().zip(&tz).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            (d, c.component_id.clone())
        })
        .collect();
    table.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let set = retrieve_examples(&target, &catalog, 5).unwrap();
    let pos: Vec<&str> = set.positives.iter().map(|e| e.component_id.as_str()).collect();
    let neg: Vec<&str> = set.negatives.iter().map(|e| e.component_id.as_str()).collect();
    let near: Vec<&str> = table[..5].iter().map(|e| e.1.as_str()).collect();
    let far: Vec<&str> = table[45..].iter().rev().map(|e| e.1.as_str()).collect();
    assert_eq!(pos, near);
    assert_eq!(neg, far);
    for e in set.positives.iter().chain(&set.negatives) {
        let want = table.iter().find(|t| t.1 == e.component_id).unwrap().0;
        assert!(relative_close(e.distance, want, 1e-9));
    }
}

const PROMPT_OUT: &str = "WLSYNTH_TEST_PROMPT_OUT";

fn reference_prompt() -> String {
    let mut r = rng(703);
    let catalog = random_catalog(&mut r, 12, "pr");
    let target = GenerationTarget {
        target_id: "g0".into(),
        feature: PerformanceFeature::new(vec![1234.5, 6.75e7], vec![2.0, 1.0, 3.0]),
        duration_ms: 4321.0,
        source_windows: vec![0, 2],
        weight: 4,
    };
    let set = retrieve_examples(&target.feature, &catalog, 3).unwrap();
    let hints = [
        HintRound {
            attempt: 1,
            scenario: ScenarioId::HighCpuLowSb,
        },
        HintRound {
            attempt: 2,
            scenario: ScenarioId::RatioOff,
        },
    ];
    build_prompt(&target, &set, &set.positives[0].database, &schema(), &hints)
}

#[test]
fn prompt_is_byte_identical_across_processes() {
    if let Ok(path) = std::env::var(PROMPT_OUT) {
        std::fs::write(path, reference_prompt()).unwrap();
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("prompt{run}.txt"));
        let status = std::process::Command::new(std::env::current_exe().unwrap())
            .args(["prompt_is_byte_identical_across_processes", "--exact", "--test-threads=1"])
            .env(PROMPT_OUT, &path)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], reference_prompt().into_bytes());
}

#[test]
fn hint_rounds_close_the_gap_geometrically() {
    let schema = schema();
    let mut r = rng(704);
    let catalog = random_catalog(&mut r, 8, "gg");
    let provider = MockProvider::new(
        schema.clone(),
        MockPolicy {
            metric_gaps: BTreeMap::from([("cpu_time_ms".to_string(), 3.0)]),
            convergence: 0.6,
            ..MockPolicy::default()
        },
    );
    let target = GenerationTarget {
        target_id: "g0".into(),
        feature: PerformanceFeature::new(vec![5_000.0, 2e8], vec![1.0, 2.0, 1.0]),
        duration_ms: 3_000.0,
        source_windows: vec![0],
        weight: 1,
    };
    let registry = DatabaseRegistry::new(catalog.databases().into_values(), vec!["tpch".into()]);
    let outcome = augmenter::generate_component(
        &target,
        &catalog,
        &provider,
        &SimulatedExecutor::new(schema.clone()),
        &registry,
        &AugmentConfig::default(),
    )
    .unwrap();
    assert!(outcome.component.is_some(), "not accepted: {:?}", outcome.failure);
    assert_eq!(outcome.database_switches, 0);
    // 3 · 0.4^r first drops within the 0.15 tolerance at r = 4
    assert_eq!(outcome.attempts.len(), 5);
    for (r, a) in outcome.attempts.iter().enumerate() {
        let gap = a.gap.unwrap();
        let want = 3.0 * 0.4f64.powi(r as i32);
        assert!((gap.cpu - want).abs() <= 1e-9, "round {r}: gap {} vs {want}", gap.cpu);
        assert!(gap.scanned_bytes.abs() <= 1e-12);
    }
}

struct Unreachable;

impl Provider for Unreachable {
    fn complete(&self, _prompt: &str) -> wlsynth_core::Result<String> {
        panic!("provider called without bad windows")
    }
}

#[test]
fn well_fitted_windows_leave_the_catalog_alone() {
    let p = planted(705, 8, 3, 8);
    let spec = AggregationSpec {
        span: Some((EPOCH, 3)),
        ..AggregationSpec::default()
    };
    let targets = build_targets(&p.trace, &spec).unwrap();
    let plans = selector::solve_all_windows(&targets, &p.catalog, &SelectionConstraints::default(), 1, None).unwrap();
    let registry = DatabaseRegistry::new(p.catalog.databases().into_values(), vec!["tpch".into()]);
    let out = augmenter::augment_catalog(
        &p.trace,
        &targets,
        &plans,
        &p.catalog,
        &Unreachable,
        &SimulatedExecutor::new(schema()),
        &registry,
        &AugmentConfig::default(),
        1,
    )
    .unwrap();
    assert!(out.bad_windows.is_empty());
    assert!(out.added.is_empty());
    assert_eq!(out.attempts().count(), 0);
    assert_eq!(out.catalog.components(), p.catalog.components());
}

fn gap_run(seed: u64) -> (wlsynth_core::Targets, Vec<SelectionPlan>, augmenter::AugmentOutcome) {
    let (trace, catalog) = planted_gap();
    let spec = AggregationSpec {
        span: Some((EPOCH, 2)),
        ..AggregationSpec::default()
    };
    let targets = build_targets(&trace, &spec).unwrap();
    let plans = selector::solve_all_windows(&targets, &catalog, &SelectionConstraints::default(), 1, None).unwrap();
    let registry = DatabaseRegistry::new(catalog.databases().into_values(), vec!["tpch".into(), "tpcds".into()]);
    let out = augmenter::augment_catalog(
        &trace,
        &targets,
        &plans,
        &catalog,
        &MockProvider::new(
            schema(),
            MockPolicy {
                gap: 0.8,
                convergence: 0.5,
                ..MockPolicy::default()
            },
        ),
        &SimulatedExecutor::new(schema()).with_noise(seed, 0.02),
        &registry,
        &AugmentConfig::default(),
        seed,
    )
    .unwrap();
    (targets, plans, out)
}

#[test]
fn augmentation_loop_is_deterministic() {
    let (_, _, a) = gap_run(11);
    let (_, _, b) = gap_run(11);
    assert_eq!(a.catalog.components(), b.catalog.components());
    assert_eq!(a.added, b.added);
    let prompts = |o: &augmenter::AugmentOutcome| o.attempts().map(|x| x.prompt.clone()).collect::<Vec<_>>();
    assert_eq!(prompts(&a), prompts(&b));
    assert_eq!(a.outcomes, b.outcomes);
}

#[test]
fn augmentation_lowers_metric_and_operator_errors() {
    let (targets, before, out) = gap_run(12);
    assert!(!out.added.is_empty());
    let after = selector::solve_all_windows(&targets, &out.catalog, &SelectionConstraints::default(), 1, Some(&before)).unwrap();
    let schema = schema();
    let nm = schema.n_metrics();
    let errors = |plans: &[SelectionPlan]| {
        let (mut metric, mut operator) = (0.0, 0.0);
        for w in &out.bad_windows {
            let t = targets.windows[*w].feature.to_vec();
            let a = plans[*w].achieved.to_vec();
            for d in 0..t.len() {
                let e = (a[d] - t[d]).abs() / t[d].max(1.0);
                if d < nm {
                    metric += e;
                } else {
                    operator += e;
                }
            }
        }
        (metric, operator)
    };
    let (m0, o0) = errors(&before);
    let (m1, o1) = errors(&after);
    assert!(m1 < m0, "metric error {m0} -> {m1}");
    assert!(o1 < o0, "operator error {o0} -> {o1}");
    let added: BTreeSet<&str> = out.added.iter().map(String::as_str).collect();
    assert!(out
        .catalog
        .components()
        .iter()
        .filter(|c| added.contains(c.component_id.as_str()))
        .all(|c| c.origin == Origin::Augmented));
}

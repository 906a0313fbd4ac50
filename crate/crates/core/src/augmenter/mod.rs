//! Catalog augmentation through a language-model provider.
//!
//! Queries of badly fitted windows are clustered into generation targets. For
//! each target the provider sees the closest and farthest catalog components
//! as examples, its answer is profiled, and the gap to the target decides
//! between acceptance, a hinted retry, or a move to another database.

pub mod database;
pub mod examples;
pub mod hints;
pub mod kmeans;
pub mod prompt;
pub mod provider;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::catalog::{profile_query, Catalog, DatabaseDescriptor, Executor, Origin, WorkloadComponent};
use crate::error::{Error, Result};
use crate::feature::{Normalizer, PerformanceFeature};
use crate::seed;
use crate::selector::SelectionPlan;
use crate::trace::{touched_windows, QueryRecord, Targets, Trace};

pub use database::DatabaseRegistry;
pub use examples::{retrieve_examples, Example, ExampleSet};
pub use hints::{classify_gap, Action, Gap, GapConfig, ScenarioId, Verdict};
pub use prompt::{build_prompt, HintRound};
pub use provider::{HttpProvider, MockPolicy, MockProvider, Provider, ScaleClamp};

/// A cluster centroid of under-fitted queries.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTarget {
    pub target_id: String,
    pub feature: PerformanceFeature,
    /// Mean duration of the clustered queries.
    pub duration_ms: f64,
    pub source_windows: Vec<usize>,
    /// Number of clustered queries.
    pub weight: usize,
}

/// A query from a badly fitted window.
#[derive(Debug, Clone, Copy)]
pub struct WindowQuery<'a> {
    pub window_index: usize,
    pub record: &'a QueryRecord,
}

/// Clusters z-normalized query features into at most `k` targets, reported in
/// native units. Collapses to the number of distinct features when that is
/// smaller than `k`.
pub fn find_generation_targets(queries: &[WindowQuery], k: usize, seed: u64) -> Result<Vec<GenerationTarget>> {
    if k == 0 {
        return Err(Error::Config("cluster count k must be at least 1".into()));
    }
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let raw: Vec<Vec<f64>> = queries.iter().map(|q| q.record.feature().to_vec()).collect();
    let n_metrics = queries[0].record.metrics.len();
    let distinct = kmeans::distinct_count(&raw);
    let k = if distinct < k {
        log::warn!("only {distinct} distinct query features for k = {k}; producing {distinct} targets");
        distinct
    } else {
        k
    };
    let norm = Normalizer::fit(raw.iter().map(|p| p.as_slice()));
    let points: Vec<Vec<f64>> = raw.iter().map(|p| norm.normalize(p)).collect();
    let mut rng = seed::stream(seed, "augment/kmeans");
    let clustering = kmeans::kmeans(&points, k, &mut rng);

    let mut targets = Vec::with_capacity(clustering.centroids.len());
    for c in 0..clustering.centroids.len() {
        let members: Vec<&WindowQuery> = queries
            .iter()
            .zip(&clustering.assignments)
            .filter(|(_, a)| **a == c)
            .map(|(q, _)| q)
            .collect();
        // the z-transform is affine, so the de-normalized centroid is the raw
        // member mean; computing it directly avoids the round-off
        let mut values = vec![0.0; raw[0].len()];
        for (q, a) in raw.iter().zip(&clustering.assignments) {
            if *a == c {
                for (x, v) in values.iter_mut().zip(q) {
                    *x += v;
                }
            }
        }
        values.iter_mut().for_each(|x| *x /= members.len() as f64);
        let windows: BTreeSet<usize> = members.iter().map(|q| q.window_index).collect();
        targets.push(GenerationTarget {
            target_id: format!("g{c}"),
            feature: PerformanceFeature::from_slice(&values, n_metrics),
            duration_ms: members.iter().map(|q| q.record.duration_ms as f64).sum::<f64>() / members.len() as f64,
            source_windows: windows.into_iter().collect(),
            weight: members.len(),
        });
    }
    Ok(targets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Cluster count.
    pub k: usize,
    /// Examples per side.
    pub examples: usize,
    pub max_attempts: usize,
    pub max_db_switches: usize,
    pub gap: GapConfig,
    /// Windows whose objective exceeds this are augmented.
    pub bad_window_threshold: f64,
    pub profile_repetitions: usize,
    /// Benchmarks ordered by schema complexity.
    pub schema_complexity: Vec<String>,
    /// Targets generated concurrently.
    pub max_in_flight: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            k: 3,
            examples: 3,
            max_attempts: 5,
            max_db_switches: 2,
            gap: GapConfig::default(),
            bad_window_threshold: 0.2,
            profile_repetitions: 3,
            schema_complexity: vec!["tpch".into(), "tpcds".into()],
            max_in_flight: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptVerdict {
    Accepted,
    Retry,
    DatabaseSwitch,
    /// Last attempt of an exhausted target.
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationAttempt {
    pub target_id: String,
    /// Position within the current database, reset on a switch.
    pub attempt_index: usize,
    /// Position across the whole target.
    pub sequence: usize,
    pub database: String,
    pub prompt: String,
    pub response: String,
    pub profiled: Option<PerformanceFeature>,
    pub duration_ms: Option<f64>,
    pub gap: Option<Gap>,
    pub scenario: Option<ScenarioId>,
    pub verdict: AttemptVerdict,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationFailure {
    pub target_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub target_id: String,
    pub component: Option<WorkloadComponent>,
    pub attempts: Vec<GenerationAttempt>,
    pub database_switches: usize,
    /// Databases created while switching.
    pub new_databases: Vec<DatabaseDescriptor>,
    pub failure: Option<GenerationFailure>,
}

/// Runs the prompt → provider → profile → classify loop for one target.
pub fn generate_component(
    target: &GenerationTarget,
    catalog: &Catalog,
    provider: &dyn Provider,
    executor: &dyn Executor,
    registry: &DatabaseRegistry,
    cfg: &AugmentConfig,
) -> Result<GenerationOutcome> {
    if cfg.max_attempts == 0 {
        return Err(Error::Config("max_attempts must be at least 1".into()));
    }
    let schema = catalog.schema();
    let set = retrieve_examples(&target.feature, catalog, cfg.examples)?;
    let mut registry = registry.clone();
    let known: BTreeSet<String> = registry.databases().iter().map(|d| d.key()).collect();
    let preferred = set.preferred_database().ok_or(Error::EmptyCatalog)?;
    let mut database = registry.register(preferred).clone();

    let mut out = GenerationOutcome {
        target_id: target.target_id.clone(),
        component: None,
        attempts: Vec::new(),
        database_switches: 0,
        new_databases: Vec::new(),
        failure: None,
    };
    let mut hints: Vec<HintRound> = Vec::new();
    let mut in_db = 0usize;
    let mut last: Option<(ScenarioId, Gap)> = None;

    loop {
        if in_db == cfg.max_attempts {
            let switch = match last {
                Some((s, g)) if s.action() == Action::ChangeDatabase && out.database_switches < cfg.max_db_switches => {
                    registry.switch(&database, s, &g)
                }
                _ => None,
            };
            let Some(next) = switch else {
                if let Some(a) = out.attempts.last_mut() {
                    a.verdict = AttemptVerdict::Failed;
                }
                let reason = match last {
                    Some((s, _)) if s.action() == Action::ChangeDatabase && out.database_switches >= cfg.max_db_switches => {
                        format!("{s} persisted after {} database switches", out.database_switches)
                    }
                    Some((s, _)) if s.action() == Action::ChangeDatabase => {
                        format!("{s} persisted and no other database fits")
                    }
                    Some((s, _)) => format!("{s} persisted after {} attempts", cfg.max_attempts),
                    None => format!("{} attempts failed to profile", cfg.max_attempts),
                };
                out.failure = Some(GenerationFailure {
                    target_id: target.target_id.clone(),
                    reason,
                });
                break;
            };
            if let Some(a) = out.attempts.last_mut() {
                a.verdict = AttemptVerdict::DatabaseSwitch;
            }
            log::info!("target {}: switching {} -> {}", target.target_id, database.key(), next.key());
            database = next;
            out.database_switches += 1;
            in_db = 0;
            hints.clear();
            last = None;
        }

        let sequence = out.attempts.len();
        let prompt = build_prompt(target, &set, &database, schema, &hints);
        let response = provider.complete(&prompt).map_err(|e| Error::Provider {
            attempt: sequence,
            message: e.to_string(),
        })?;
        let mut attempt = GenerationAttempt {
            target_id: target.target_id.clone(),
            attempt_index: in_db,
            sequence,
            database: database.key(),
            prompt,
            response,
            profiled: None,
            duration_ms: None,
            gap: None,
            scenario: None,
            verdict: AttemptVerdict::Retry,
            error: None,
        };
        in_db += 1;

        let profile = match profile_query(&attempt.response, &database, executor, cfg.profile_repetitions) {
            Ok(p) => p,
            Err(e) => {
                attempt.error = Some(e.to_string());
                out.attempts.push(attempt);
                continue;
            }
        };
        let (gap, verdict) = classify_gap(&target.feature, &profile.feature, schema, &cfg.gap)?;
        attempt.profiled = Some(profile.feature.clone());
        attempt.duration_ms = Some(profile.duration_ms);
        attempt.gap = Some(gap);
        match verdict {
            Verdict::Accepted => {
                attempt.verdict = AttemptVerdict::Accepted;
                out.component = Some(WorkloadComponent {
                    component_id: format!("aug-{}", &seed::sha256_hex(&attempt.response)[..12]),
                    query_ref: attempt.response.clone(),
                    database: database.clone(),
                    duration_ms: profile.duration_ms.max(f64::MIN_POSITIVE),
                    feature: profile.feature,
                    origin: Origin::Augmented,
                    duration_range: Some((profile.duration_min, profile.duration_max)),
                });
                out.attempts.push(attempt);
                break;
            }
            Verdict::Scenario(s) => {
                attempt.scenario = Some(s);
                hints.push(HintRound {
                    attempt: in_db,
                    scenario: s,
                });
                last = Some((s, gap));
                out.attempts.push(attempt);
            }
        }
    }
    out.new_databases = registry
        .databases()
        .iter()
        .filter(|d| !known.contains(&d.key()))
        .cloned()
        .collect();
    Ok(out)
}

/// Queries whose mass reaches a bad window, tagged with the first such window.
pub fn queries_in_windows<'a>(trace: &'a Trace, targets: &Targets, windows: &BTreeSet<usize>) -> Vec<WindowQuery<'a>> {
    trace
        .records
        .iter()
        .filter_map(|r| {
            let w = touched_windows(&targets.grid, r).find(|w| windows.contains(w))?;
            Some(WindowQuery {
                window_index: w,
                record: r,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub catalog: Catalog,
    pub bad_windows: Vec<usize>,
    pub targets: Vec<GenerationTarget>,
    pub outcomes: Vec<GenerationOutcome>,
    /// Ids of the components added to the catalog.
    pub added: Vec<String>,
    pub registry: DatabaseRegistry,
}

impl AugmentOutcome {
    pub fn attempts(&self) -> impl Iterator<Item = &GenerationAttempt> {
        self.outcomes.iter().flat_map(|o| o.attempts.iter())
    }

    pub fn failures(&self) -> impl Iterator<Item = &GenerationFailure> {
        self.outcomes.iter().filter_map(|o| o.failure.as_ref())
    }
}

/// Generates components for the windows whose plan objective exceeds the
/// threshold and returns the extended catalog. Re-solving against it can only
/// improve window objectives, since it is a superset of the old candidates.
#[allow(clippy::too_many_arguments)]
pub fn augment_catalog(
    trace: &Trace,
    targets: &Targets,
    plans: &[SelectionPlan],
    catalog: &Catalog,
    provider: &dyn Provider,
    executor: &dyn Executor,
    registry: &DatabaseRegistry,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<AugmentOutcome> {
    let bad: BTreeSet<usize> = plans
        .iter()
        .filter(|p| p.objective_value > cfg.bad_window_threshold)
        .map(|p| p.window_index)
        .collect();
    let mut outcome = AugmentOutcome {
        catalog: catalog.clone(),
        bad_windows: bad.iter().copied().collect(),
        targets: Vec::new(),
        outcomes: Vec::new(),
        added: Vec::new(),
        registry: registry.clone(),
    };
    if bad.is_empty() {
        return Ok(outcome);
    }
    let queries = queries_in_windows(trace, targets, &bad);
    let k = cfg.k.min(queries.len().max(1));
    outcome.targets = find_generation_targets(&queries, k, seed)?;

    let results = crate::selector::run_parallel(cfg.max_in_flight.max(1), outcome.targets.len(), |i| {
        generate_component(&outcome.targets[i], catalog, provider, executor, registry, cfg)
    })?;
    for r in results {
        for d in &r.new_databases {
            outcome.registry.register(d.clone());
        }
        if let Some(c) = &r.component {
            if outcome.catalog.contains(&c.component_id) {
                log::warn!("generated component {} duplicates an existing one; skipped", c.component_id);
            } else {
                outcome.added.push(c.component_id.clone());
                outcome.catalog.insert(c.clone())?;
            }
        }
        if let Some(f) = &r.failure {
            log::warn!("target {} not generated: {}", f.target_id, f.reason);
        }
        outcome.outcomes.push(r);
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct AttemptLine<'a> {
    target_id: &'a str,
    sequence: usize,
    attempt_index: usize,
    database: &'a str,
    prompt_sha256: String,
    scenario: Option<ScenarioId>,
    delta_cpu: Option<f64>,
    delta_scanned_bytes: Option<f64>,
    delta_ratio: Option<f64>,
    verdict: AttemptVerdict,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct QueryLine<'a> {
    target_id: &'a str,
    sequence: usize,
    database: &'a str,
    query: &'a str,
}

fn write_lines<T: Serialize>(path: &Path, lines: impl Iterator<Item = T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for line in lines {
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One JSON object per attempt: prompt hash, scenario, deltas and verdict.
pub fn write_attempt_log<'a>(path: impl AsRef<Path>, attempts: impl Iterator<Item = &'a GenerationAttempt>) -> Result<()> {
    write_lines(
        path.as_ref(),
        attempts.map(|a| AttemptLine {
            target_id: &a.target_id,
            sequence: a.sequence,
            attempt_index: a.attempt_index,
            database: &a.database,
            prompt_sha256: seed::sha256_hex(&a.prompt),
            scenario: a.scenario,
            delta_cpu: a.gap.map(|g| g.cpu),
            delta_scanned_bytes: a.gap.map(|g| g.scanned_bytes),
            delta_ratio: a.gap.map(|g| g.ratio),
            verdict: a.verdict,
            error: a.error.as_deref(),
        }),
    )
}

/// The provider's answer for every attempt.
pub fn write_generated_queries<'a>(path: impl AsRef<Path>, attempts: impl Iterator<Item = &'a GenerationAttempt>) -> Result<()> {
    write_lines(
        path.as_ref(),
        attempts.map(|a| QueryLine {
            target_id: &a.target_id,
            sequence: a.sequence,
            database: &a.database,
            query: &a.response,
        }),
    )
}

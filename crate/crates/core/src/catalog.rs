//! Workload components, their databases, and profiling through an [`Executor`].

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::csvio::{self, Header};
use crate::error::{Error, Result};
use crate::feature::{FeatureSchema, PerformanceFeature};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSummary {
    pub name: String,
    pub row_count: u64,
    #[serde(default)]
    pub columns: Vec<String>,
}

/// A populated benchmark database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseDescriptor {
    pub benchmark_name: String,
    pub scale_factor: f64,
    /// Skew level, 0 (uniform) to 4.
    pub skewness: u8,
    #[serde(default)]
    pub schema_summary: Vec<TableSummary>,
}

impl DatabaseDescriptor {
    pub fn new(benchmark_name: impl Into<String>, scale_factor: f64, skewness: u8) -> Result<Self> {
        let d = Self {
            benchmark_name: benchmark_name.into(),
            scale_factor,
            skewness,
            schema_summary: Vec::new(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor > 0.0 && self.scale_factor.is_finite()) {
            return Err(Error::Schema(format!(
                "scale_factor must be positive, got {}",
                self.scale_factor
            )));
        }
        if self.skewness > 4 {
            return Err(Error::Schema(format!(
                "skewness must be in 0..=4, got {}",
                self.skewness
            )));
        }
        Ok(())
    }

    /// Stable identifier, e.g. `tpch-sf1-skew0`.
    pub fn key(&self) -> String {
        format!(
            "{}-sf{}-skew{}",
            self.benchmark_name, self.scale_factor, self.skewness
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Benchmark,
    Augmented,
}

impl Origin {
    fn as_str(self) -> &'static str {
        match self {
            Origin::Benchmark => "benchmark",
            Origin::Augmented => "augmented",
        }
    }
}

/// A (query, database) pair with its profiled feature `F'_j` and duration `T'_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadComponent {
    pub component_id: String,
    pub query_ref: String,
    pub database: DatabaseDescriptor,
    pub duration_ms: f64,
    pub feature: PerformanceFeature,
    pub origin: Origin,
    /// Min and max duration seen while profiling.
    pub duration_range: Option<(f64, f64)>,
}

impl WorkloadComponent {
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        if !(self.duration_ms > 0.0 && self.duration_ms.is_finite()) {
            return Err(Error::Schema(format!(
                "component {} has non-positive duration {}",
                self.component_id, self.duration_ms
            )));
        }
        schema.check(&self.feature)?;
        if !self.feature.is_finite_nonnegative() {
            return Err(Error::Schema(format!(
                "component {} has a negative or non-finite feature value",
                self.component_id
            )));
        }
        self.database.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Catalog {
    schema: FeatureSchema,
    components: Vec<WorkloadComponent>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(schema: FeatureSchema) -> Self {
        Self {
            schema,
            components: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_components(
        schema: FeatureSchema,
        components: impl IntoIterator<Item = WorkloadComponent>,
    ) -> Result<Self> {
        let mut c = Self::new(schema);
        for comp in components {
            c.insert(comp)?;
        }
        Ok(c)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn components(&self) -> &[WorkloadComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn insert(&mut self, component: WorkloadComponent) -> Result<()> {
        component.validate(&self.schema)?;
        if self.index.contains_key(&component.component_id) {
            return Err(Error::DuplicateComponent(component.component_id));
        }
        self.index
            .insert(component.component_id.clone(), self.components.len());
        self.components.push(component);
        Ok(())
    }

    pub fn extend(&mut self, other: &Catalog) -> Result<()> {
        if other.schema != self.schema {
            return Err(Error::Schema("catalog schemas differ".into()));
        }
        for c in other.components() {
            self.insert(c.clone())?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&WorkloadComponent> {
        self.index
            .get(id)
            .map(|&i| &self.components[i])
            .ok_or_else(|| Error::UnknownComponent(id.to_string()))
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut WorkloadComponent> {
        match self.index.get(id) {
            Some(&i) => Ok(&mut self.components[i]),
            None => Err(Error::UnknownComponent(id.to_string())),
        }
    }

    /// Distinct databases referenced by the components, keyed by [`DatabaseDescriptor::key`].
    pub fn databases(&self) -> BTreeMap<String, DatabaseDescriptor> {
        self.components
            .iter()
            .map(|c| (c.database.key(), c.database.clone()))
            .collect()
    }

    pub fn only(&self, origin: Origin) -> Catalog {
        let mut out = Catalog::new(self.schema.clone());
        for c in self.components.iter().filter(|c| c.origin == origin) {
            out.insert(c.clone()).expect("subset of a valid catalog");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, with_origin: bool) -> Result<()> {
        let path = path.as_ref();
        let mut w = csvio::writer(path)?;
        let mut header = vec!["component_id", "benchmark", "scale_factor", "skewness", "duration_ms"];
        header.extend(self.schema.names());
        if with_origin {
            header.extend(["origin", "query"]);
        }
        w.write_record(&header)?;
        for c in &self.components {
            let mut row = vec![
                c.component_id.clone(),
                c.database.benchmark_name.clone(),
                csvio::fmt_f64(c.database.scale_factor),
                c.database.skewness.to_string(),
                csvio::fmt_f64(c.duration_ms),
            ];
            row.extend(c.feature.values().map(csvio::fmt_f64));
            if with_origin {
                row.push(c.origin.as_str().to_string());
                row.push(if c.query_ref == c.component_id { String::new() } else { c.query_ref.clone() });
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub fn load_catalog(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Catalog> {
    let path = path.as_ref();
    let mut rdr = csvio::reader(path)?;
    let h = Header::new(rdr.headers()?);
    let id = h.require("component_id")?;
    let bench = h.require("benchmark")?;
    let sf = h.require("scale_factor")?;
    let skew = h.require("skewness")?;
    let dur = h.require("duration_ms")?;
    let origin_col = h.optional("origin");
    let query_col = h.optional("query");
    let metric_cols = schema.metrics.iter().map(|m| h.require(m)).collect::<Result<Vec<_>>>()?;
    let op_cols = schema.operators.iter().map(|m| h.require(m)).collect::<Result<Vec<_>>>()?;

    let mut catalog = Catalog::new(schema.clone());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let skewness: u8 = csvio::parse(&rec, skew, row, "skewness")?;
        let database = DatabaseDescriptor {
            benchmark_name: csvio::field(&rec, bench).to_string(),
            scale_factor: csvio::parse_nonneg(&rec, sf, row, "scale_factor")?,
            skewness,
            schema_summary: Vec::new(),
        };
        database.validate().map_err(|e| Error::Validation {
            row,
            message: e.to_string(),
        })?;
        let origin = match origin_col.map(|c| csvio::field(&rec, c)) {
            None | Some("") | Some("benchmark") => Origin::Benchmark,
            Some("augmented") => Origin::Augmented,
            Some(other) => {
                return Err(Error::Parse {
                    row,
                    column: "origin".into(),
                    value: other.into(),
                })
            }
        };
        let component_id = csvio::field(&rec, id).to_string();
        // untrimmed: the query text is stored verbatim
        let query_ref = match query_col.and_then(|c| rec.get(c)) {
            None | Some("") => component_id.clone(),
            Some(q) => q.to_string(),
        };
        let component = WorkloadComponent {
            query_ref,
            component_id,
            database,
            duration_ms: csvio::parse_nonneg(&rec, dur, row, "duration_ms")?,
            feature: PerformanceFeature::new(
                metric_cols
                    .iter()
                    .zip(&schema.metrics)
                    .map(|(&c, n)| csvio::parse_nonneg(&rec, c, row, n))
                    .collect::<Result<Vec<_>>>()?,
                op_cols
                    .iter()
                    .zip(&schema.operators)
                    .map(|(&c, n)| csvio::parse_nonneg(&rec, c, row, n))
                    .collect::<Result<Vec<_>>>()?,
            ),
            origin,
            duration_range: None,
        };
        match catalog.insert(component) {
            Err(Error::DuplicateComponent(id)) => return Err(Error::DuplicateComponent(id)),
            Err(e) => {
                return Err(Error::Validation {
                    row,
                    message: e.to_string(),
                })
            }
            Ok(()) => {}
        }
    }
    Ok(catalog)
}

/// One execution of a query against a database.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub duration_ms: f64,
    pub feature: PerformanceFeature,
}

/// Runs a query and reports what it cost. `run_index` identifies the repetition
/// (cache state) so implementations can vary across runs deterministically.
pub trait Executor: Send + Sync {
    fn run(&self, query_ref: &str, database: &DatabaseDescriptor, run_index: usize) -> Result<Execution>;
}

/// Mean feature and duration over several runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub feature: PerformanceFeature,
    pub duration_ms: f64,
    pub duration_min: f64,
    pub duration_max: f64,
}

pub fn profile_query(
    query_ref: &str,
    database: &DatabaseDescriptor,
    executor: &dyn Executor,
    repetitions: usize,
) -> Result<Profile> {
    if repetitions == 0 {
        return Err(Error::Config("profiling needs at least one repetition".into()));
    }
    let mut runs = Vec::with_capacity(repetitions);
    for run in 0..repetitions {
        let exec = executor
            .run(query_ref, database, run)
            .map_err(|e| Error::Profiling {
                run,
                message: e.to_string(),
            })?;
        runs.push(exec);
    }
    let n = repetitions as f64;
    let mut feature = runs[0].feature.scaled(0.0);
    let mut duration = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in &runs {
        if r.feature.dims() != feature.dims() {
            return Err(Error::DimensionMismatch {
                expected: feature.dims(),
                found: r.feature.dims(),
            });
        }
        feature.add_scaled(&r.feature, 1.0);
        duration += r.duration_ms;
        lo = lo.min(r.duration_ms);
        hi = hi.max(r.duration_ms);
    }
    Ok(Profile {
        feature: feature.scaled(1.0 / n),
        duration_ms: duration / n,
        duration_min: lo,
        duration_max: hi,
    })
}

/// Profiles `component` and writes the means back. The entry is left untouched on failure.
pub fn profile_component(
    component: &mut WorkloadComponent,
    executor: &dyn Executor,
    repetitions: usize,
) -> Result<Profile> {
    let profile = profile_query(&component.query_ref, &component.database, executor, repetitions)?;
    if component.feature.dims() != 0 && component.feature.dims() != profile.feature.dims() {
        return Err(Error::DimensionMismatch {
            expected: component.feature.dims(),
            found: profile.feature.dims(),
        });
    }
    component.feature = profile.feature.clone();
    component.duration_ms = profile.duration_ms;
    component.duration_range = Some((profile.duration_min, profile.duration_max));
    Ok(profile)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureQuery {
    pub query_ref: String,
    /// Database key, see [`DatabaseDescriptor::key`].
    pub database: String,
    pub duration_ms: f64,
    /// Metric and operator values by column name.
    pub values: BTreeMap<String, f64>,
}

/// Table-driven executor description.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExecutorFixture {
    #[serde(default)]
    pub seed: u64,
    /// Relative standard deviation of run-to-run noise on duration and metrics.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub databases: Vec<DatabaseDescriptor>,
    #[serde(default)]
    pub queries: Vec<FixtureQuery>,
}

/// Marker for queries that carry their own simulated profile, e.g.
/// `/* wlsynth-profile duration_ms=1200; cpu_time_ms=40 */ SELECT ...`.
pub const PROFILE_ANNOTATION: &str = "wlsynth-profile";

/// Deterministic simulated executor. Known queries are answered from the fixture
/// table; queries carrying a profile annotation are answered from it. Run-indexed
/// multiplicative noise stands in for cache effects.
#[derive(Debug, Clone)]
pub struct SimulatedExecutor {
    schema: FeatureSchema,
    seed: u64,
    noise_sigma: f64,
    table: HashMap<(String, String), Execution>,
    databases: Vec<DatabaseDescriptor>,
}

impl SimulatedExecutor {
    pub fn new(schema: FeatureSchema) -> Self {
        Self {
            schema,
            seed: 0,
            noise_sigma: 0.0,
            table: HashMap::new(),
            databases: Vec::new(),
        }
    }

    pub fn from_fixture(fixture: &ExecutorFixture, schema: &FeatureSchema) -> Result<Self> {
        let mut ex = Self::new(schema.clone());
        ex.seed = fixture.seed;
        ex.noise_sigma = fixture.noise_sigma;
        for d in &fixture.databases {
            d.validate()?;
        }
        ex.databases = fixture.databases.clone();
        for q in &fixture.queries {
            let feature = feature_from_map(&q.values, schema)?;
            ex.table.insert(
                (q.query_ref.clone(), q.database.clone()),
                Execution {
                    duration_ms: q.duration_ms,
                    feature,
                },
            );
        }
        Ok(ex)
    }

    pub fn load(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fixture: ExecutorFixture = serde_json::from_str(&text)?;
        Self::from_fixture(&fixture, schema)
    }

    pub fn with_noise(mut self, seed: u64, sigma: f64) -> Self {
        self.seed = seed;
        self.noise_sigma = sigma;
        self
    }

    pub fn insert(&mut self, query_ref: &str, database: &DatabaseDescriptor, exec: Execution) {
        self.table
            .insert((query_ref.to_string(), database.key()), exec);
    }

    /// Databases declared by the fixture.
    pub fn databases(&self) -> &[DatabaseDescriptor] {
        &self.databases
    }

    fn base(&self, query_ref: &str, database: &DatabaseDescriptor) -> Result<Execution> {
        if let Some(e) = self.table.get(&(query_ref.to_string(), database.key())) {
            return Ok(e.clone());
        }
        if let Some(values) = parse_profile_annotation(query_ref) {
            let duration_ms = *values
                .get("duration_ms")
                .ok_or_else(|| Error::Executor("profile annotation lacks duration_ms".into()))?;
            let feature = feature_from_map(&values, &self.schema)?;
            return Ok(Execution {
                duration_ms,
                feature,
            });
        }
        Err(Error::Executor(format!(
            "no simulated profile for query {:?} on {}",
            truncate(query_ref, 60),
            database.key()
        )))
    }
}

impl Executor for SimulatedExecutor {
    fn run(&self, query_ref: &str, database: &DatabaseDescriptor, run_index: usize) -> Result<Execution> {
        let mut exec = self.base(query_ref, database)?;
        if self.noise_sigma > 0.0 {
            let label = format!("{query_ref}|{}|{run_index}", database.key());
            let mut rng = seed::stream(self.seed, &label);
            let mut factor = || {
                let z: f64 = StandardNormal.sample(&mut rng);
                (1.0 + self.noise_sigma * z).max(0.0)
            };
            exec.duration_ms = (exec.duration_ms * factor()).max(1.0);
            for m in exec.feature.metrics.iter_mut() {
                *m *= factor();
            }
        }
        Ok(exec)
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn feature_from_map(values: &BTreeMap<String, f64>, schema: &FeatureSchema) -> Result<PerformanceFeature> {
    let get = |name: &String| {
        values
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn { column: name.clone() })
    };
    Ok(PerformanceFeature::new(
        schema.metrics.iter().map(get).collect::<Result<_>>()?,
        schema.operators.iter().map(get).collect::<Result<_>>()?,
    ))
}

/// Extracts `key=value` pairs from a `/* wlsynth-profile ... */` comment.
pub fn parse_profile_annotation(text: &str) -> Option<BTreeMap<String, f64>> {
    let start = text.find(PROFILE_ANNOTATION)? + PROFILE_ANNOTATION.len();
    let rest = &text[start..];
    let end = rest.find("*/")?;
    let mut out = BTreeMap::new();
    for pair in rest[..end].split(';') {
        let pair = pair.trim();
        if pair.is_empty() {
            continue;
        }
        let (k, v) = pair.split_once('=')?;
        out.insert(k.trim().to_string(), v.trim().parse().ok()?);
    }
    Some(out)
}

/// Formats a profile annotation that [`parse_profile_annotation`] reads back.
pub fn profile_annotation(duration_ms: f64, feature: &PerformanceFeature, schema: &FeatureSchema) -> String {
    let mut s = format!("/* {PROFILE_ANNOTATION} duration_ms={duration_ms}");
    for (name, v) in schema.names().zip(feature.values()) {
        s.push_str(&format!("; {name}={v}"));
    }
    s.push_str(" */");
    s
}

//! Run configuration, read from a TOML document of flat and dotted keys.
//!
//! ```toml
//! metrics = ["cpu_time_ms", "scanned_bytes"]
//! operators = ["join_num", "aggregate_num"]
//! trace = "trace.csv"
//! catalog = "catalog.csv"
//! seed = 7
//! z = "2x"
//! provider.kind = "mock"
//! augment.k = 3
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::augmenter::{AugmentConfig, GapConfig, MockPolicy};
use crate::error::{Error, Result};
use crate::feature::FeatureSchema;
use crate::scheduler::{SaConfig, Temperature};
use crate::selector::{QueryLevel, SelectionConstraints, SolverBudget, TotalCap};
use crate::trace::{AggregationSpec, TraceMode};

/// `z` as an absolute count or as a multiple of the window's query count (`"2x"`).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum TotalCapSetting {
    Count(u32),
    Text(String),
}

impl TotalCapSetting {
    pub fn parse(&self) -> Result<TotalCap> {
        match self {
            TotalCapSetting::Count(z) => Ok(TotalCap::Fixed(*z)),
            TotalCapSetting::Text(s) => {
                let s = s.trim();
                if let Some(k) = s.strip_suffix('x') {
                    let k: f64 = k
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("invalid z multiple {s:?}")))?;
                    if !(k > 0.0 && k.is_finite()) {
                        return Err(Error::Config(format!("z multiple must be positive, got {s:?}")));
                    }
                    Ok(TotalCap::QueryCountMultiple(k))
                } else {
                    s.parse()
                        .map(TotalCap::Fixed)
                        .map_err(|_| Error::Config(format!("invalid z {s:?}")))
                }
            }
        }
    }
}

impl std::str::FromStr for TotalCapSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let setting = match s.parse::<u32>() {
            Ok(z) => TotalCapSetting::Count(z),
            Err(_) => TotalCapSetting::Text(s.to_string()),
        };
        setting.parse()?;
        Ok(setting)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub node_limit: usize,
    /// Unset keeps runs reproducible.
    pub time_limit_ms: Option<u64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let b = SolverBudget::default();
        Self {
            node_limit: b.node_limit,
            time_limit_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaSettings {
    pub no_improve_steps: usize,
    pub max_steps: usize,
    pub move_granularity_ms: u64,
    pub calibration_moves: usize,
    /// Both set: fixed temperatures; otherwise calibrated.
    pub v_max: Option<f64>,
    pub v_min: Option<f64>,
}

impl Default for SaSettings {
    fn default() -> Self {
        let d = SaConfig::default();
        Self {
            no_improve_steps: d.no_improve_steps,
            max_steps: d.max_steps,
            move_granularity_ms: d.move_granularity_ms,
            calibration_moves: d.calibration_moves,
            v_max: None,
            v_min: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderSettings {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub mock: MockPolicy,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: None,
            timeout_ms: 60_000,
            mock: MockPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSettings {
    pub k: usize,
    pub examples: usize,
    pub max_attempts: usize,
    pub max_db_switches: usize,
    pub tau: f64,
    pub threshold: f64,
    pub profile_repetitions: usize,
    pub cpu_metric: String,
    pub scanned_bytes_metric: String,
    pub schema_complexity: Vec<String>,
    pub max_in_flight: usize,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        let d = AugmentConfig::default();
        Self {
            k: d.k,
            examples: d.examples,
            max_attempts: d.max_attempts,
            max_db_switches: d.max_db_switches,
            tau: d.gap.tolerance,
            threshold: d.bad_window_threshold,
            profile_repetitions: d.profile_repetitions,
            cpu_metric: d.gap.cpu_metric,
            scanned_bytes_metric: d.gap.scanned_bytes_metric,
            schema_complexity: d.schema_complexity,
            max_in_flight: d.max_in_flight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub metrics: Vec<String>,
    #[serde(default)]
    pub operators: Vec<String>,
    #[serde(default)]
    pub mode: TraceMode,
    pub trace: PathBuf,
    pub catalog: PathBuf,
    /// Simulated executor fixture (JSON); needed to profile generated queries
    /// on databases the fixture describes.
    #[serde(default)]
    pub executor: Option<PathBuf>,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::window_ms")]
    pub window_ms: u64,
    #[serde(default = "defaults::interval_ms")]
    pub interval_ms: u64,
    /// Explicit grid start; the earliest arrival otherwise.
    #[serde(default)]
    pub span_start_ts: Option<i64>,
    #[serde(default)]
    pub n_windows: Option<usize>,
    #[serde(default = "defaults::cores")]
    pub cores: u32,
    #[serde(default = "defaults::y")]
    pub y: u32,
    #[serde(default = "defaults::z")]
    pub z: TotalCapSetting,
    /// Concurrency used for the duration budget; `cores` when unset.
    #[serde(default)]
    pub max_concurrency: Option<u32>,
    /// Denominator floor of the selection and annealing objectives.
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    /// Floor used by GMAPE and GMQE.
    #[serde(default = "defaults::report_eps")]
    pub report_eps: f64,
    #[serde(default = "defaults::jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub skip_ta: bool,
    #[serde(default)]
    pub skip_augment: bool,
    /// `one_to_one` or `one_to_many` switches to query-level matching.
    #[serde(default)]
    pub query_level: Option<String>,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub sa: SaSettings,
    #[serde(default)]
    pub provider: ProviderSettings,
    #[serde(default)]
    pub augment: AugmentSettings,
}

mod defaults {
    use super::TotalCapSetting;

    pub fn seed() -> u64 {
        0
    }
    pub fn window_ms() -> u64 {
        300_000
    }
    pub fn interval_ms() -> u64 {
        30_000
    }
    pub fn cores() -> u32 {
        8
    }
    pub fn y() -> u32 {
        10
    }
    pub fn z() -> TotalCapSetting {
        TotalCapSetting::Text("2x".into())
    }
    pub fn eps() -> f64 {
        1.0
    }
    pub fn report_eps() -> f64 {
        1e-9
    }
    pub fn jobs() -> usize {
        1
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Config::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.trace);
        fix(&mut self.catalog);
        if let Some(e) = self.executor.as_mut() {
            fix(e);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(Error::Config("at least one metric column is required".into()));
        }
        if self.window_ms == 0 || self.interval_ms == 0 || !self.window_ms.is_multiple_of(self.interval_ms) {
            return Err(Error::Config(format!(
                "window_ms ({}) must be a positive multiple of interval_ms ({})",
                self.window_ms, self.interval_ms
            )));
        }
        if self.cores == 0 {
            return Err(Error::Config("cores must be at least 1".into()));
        }
        if self.span_start_ts.is_some() != self.n_windows.is_some() {
            return Err(Error::Config("span_start_ts and n_windows must be set together".into()));
        }
        if [self.eps, self.report_eps].iter().any(|e| e.is_nan() || *e <= 0.0) {
            return Err(Error::Config("eps and report_eps must be positive".into()));
        }
        self.z.parse()?;
        self.query_level()?;
        if self.provider.kind == ProviderKind::Http && self.provider.endpoint.is_none() {
            return Err(Error::Config("provider.endpoint is required for provider.kind = \"http\"".into()));
        }
        Ok(())
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::new(self.metrics.clone(), self.operators.clone())
    }

    pub fn query_level(&self) -> Result<Option<QueryLevel>> {
        self.query_level.as_deref().map(str::parse).transpose()
    }

    pub fn aggregation(&self) -> AggregationSpec {
        AggregationSpec {
            window_len_ms: self.window_ms,
            interval_len_ms: self.interval_ms,
            span: self.span_start_ts.zip(self.n_windows),
        }
    }

    pub fn constraints(&self) -> Result<SelectionConstraints> {
        Ok(SelectionConstraints {
            max_repetitions: self.y,
            total_cap: self.z.parse()?,
            max_concurrency: self.max_concurrency.unwrap_or(self.cores),
            denominator_floor: self.eps,
            weights: None,
            budget: SolverBudget {
                node_limit: self.solver.node_limit,
                time_limit: self.solver.time_limit_ms.map(Duration::from_millis),
            },
        })
    }

    pub fn annealing(&self) -> SaConfig {
        SaConfig {
            no_improve_steps: self.sa.no_improve_steps,
            max_steps: self.sa.max_steps,
            temperature: match (self.sa.v_max, self.sa.v_min) {
                (Some(max), Some(min)) => Temperature::Fixed { max, min },
                _ => Temperature::Auto,
            },
            move_granularity_ms: self.sa.move_granularity_ms,
            calibration_moves: self.sa.calibration_moves,
            denominator_floor: self.eps,
            cores: self.cores,
        }
    }

    pub fn augmentation(&self) -> AugmentConfig {
        let a = &self.augment;
        AugmentConfig {
            k: a.k,
            examples: a.examples,
            max_attempts: a.max_attempts,
            max_db_switches: a.max_db_switches,
            gap: GapConfig {
                tolerance: a.tau,
                cpu_metric: a.cpu_metric.clone(),
                scanned_bytes_metric: a.scanned_bytes_metric.clone(),
                eps: self.report_eps,
            },
            bad_window_threshold: a.threshold,
            profile_repetitions: a.profile_repetitions,
            schema_complexity: a.schema_complexity.clone(),
            max_in_flight: a.max_in_flight,
        }
    }
}

//! Text-in, text-out language-model providers.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::catalog::profile_annotation;
use crate::error::{Error, Result};
use crate::feature::{FeatureSchema, PerformanceFeature};

use super::prompt::{hint_rounds, section_values, SECTION_DATABASE, SECTION_TARGET};

pub trait Provider: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

pub const TOKEN_ENV: &str = "WLSYNTH_LLM_TOKEN";

/// Posts `{"prompt": ...}` to an endpoint and reads `{"completion": ...}` back.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct HttpRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct HttpResponse {
    completion: String,
}

impl HttpProvider {
    /// Reads the bearer token from `WLSYNTH_LLM_TOKEN` when set.
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            agent,
        }
    }
}

impl Provider for HttpProvider {
    fn complete(&self, prompt: &str) -> Result<String> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let transport = |e: ureq::Error| Error::Executor(format!("provider request to {} failed: {e}", self.endpoint));
        let mut resp = req.send_json(HttpRequest { prompt }).map_err(transport)?;
        let body: HttpResponse = resp.body_mut().read_json().map_err(transport)?;
        Ok(body.completion)
    }
}

/// Multiplies metrics when the prompt's database is smaller than a threshold,
/// modelling a database too small to host the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleClamp {
    pub min_scale_factor: f64,
    pub factor: f64,
}

/// Hidden response policy of [`MockProvider`]. With `r` hint rounds in the
/// prompt, metric `d` comes back as `target_d · (1 + g_d · (1 − convergence)^r)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockPolicy {
    /// Initial relative gap `g` for every metric.
    #[serde(default)]
    pub gap: f64,
    /// Per-metric overrides of `gap`.
    #[serde(default)]
    pub metric_gaps: BTreeMap<String, f64>,
    /// Fraction of the remaining gap closed per hint round.
    #[serde(default)]
    pub convergence: f64,
    #[serde(default)]
    pub clamp: Option<ScaleClamp>,
}

/// Deterministic provider that answers with a query annotated with the
/// profile the simulated executor should report for it.
#[derive(Debug, Clone)]
pub struct MockProvider {
    schema: FeatureSchema,
    policy: MockPolicy,
}

impl MockProvider {
    pub fn new(schema: FeatureSchema, policy: MockPolicy) -> Self {
        Self { schema, policy }
    }

    /// Answers with the target itself.
    pub fn cooperative(schema: FeatureSchema) -> Self {
        Self::new(schema, MockPolicy::default())
    }
}

impl Provider for MockProvider {
    fn complete(&self, prompt: &str) -> Result<String> {
        let malformed = |what: &str| Error::Executor(format!("mock provider: prompt lacks {what}"));
        let target: BTreeMap<&str, f64> = section_values(prompt, SECTION_TARGET)
            .into_iter()
            .filter_map(|(k, v)| v.parse().ok().map(|v| (k, v)))
            .collect();
        let get = |name: &str| target.get(name).copied().ok_or_else(|| malformed(name));
        let database = section_values(prompt, SECTION_DATABASE);
        let field = |key: &str| database.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let scale_factor: f64 = field("scale_factor")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed("scale_factor"))?;
        let benchmark = field("benchmark").unwrap_or("db");

        let rounds = hint_rounds(prompt) as i32;
        let remaining = (1.0 - self.policy.convergence).powi(rounds);
        let clamp = match self.policy.clamp {
            Some(c) if scale_factor < c.min_scale_factor => c.factor,
            _ => 1.0,
        };
        let metrics = self
            .schema
            .metrics
            .iter()
            .map(|m| {
                let g = self.policy.metric_gaps.get(m).copied().unwrap_or(self.policy.gap);
                Ok(get(m)? * (1.0 + g * remaining) * clamp)
            })
            .collect::<Result<Vec<f64>>>()?;
        let operators = self
            .schema
            .operators
            .iter()
            .map(|o| get(o))
            .collect::<Result<Vec<f64>>>()?;
        let feature = PerformanceFeature::new(metrics, operators);
        let duration = get("duration_ms")?.max(1.0);
        Ok(format!(
            "{}\nSELECT count(*) FROM {benchmark}_facts WHERE revision = {rounds}",
            profile_annotation(duration, &feature, &self.schema)
        ))
    }
}

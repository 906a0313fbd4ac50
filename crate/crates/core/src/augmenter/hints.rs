//! Gap classification between a generation target and a profiled query.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::feature::{FeatureSchema, PerformanceFeature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ScenarioId {
    #[serde(rename = "lowCPU_lowSB")]
    LowCpuLowSb,
    #[serde(rename = "highCPU_lowSB")]
    HighCpuLowSb,
    #[serde(rename = "lowCPU_highSB")]
    LowCpuHighSb,
    #[serde(rename = "both_low_or_high")]
    BothLowOrHigh,
    #[serde(rename = "ratio_off")]
    RatioOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    RewriteQuery,
    ChangeDatabase,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [
        ScenarioId::LowCpuLowSb,
        ScenarioId::HighCpuLowSb,
        ScenarioId::LowCpuHighSb,
        ScenarioId::BothLowOrHigh,
        ScenarioId::RatioOff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::LowCpuLowSb => "lowCPU_lowSB",
            ScenarioId::HighCpuLowSb => "highCPU_lowSB",
            ScenarioId::LowCpuHighSb => "lowCPU_highSB",
            ScenarioId::BothLowOrHigh => "both_low_or_high",
            ScenarioId::RatioOff => "ratio_off",
        }
    }

    pub fn action(self) -> Action {
        match self {
            ScenarioId::BothLowOrHigh | ScenarioId::RatioOff => Action::ChangeDatabase,
            _ => Action::RewriteQuery,
        }
    }

    pub fn hint_texts(self) -> &'static [&'static str] {
        match self {
            ScenarioId::LowCpuLowSb => &[
                "Try to generate a query that performs computation on a larger table.",
                "Try to delete some predicates to scan more data.",
            ],
            ScenarioId::HighCpuLowSb => &[
                "Scan more data while deleting some operators.",
                "Use more Inner Join operators to reduce the intermediate result size.",
            ],
            ScenarioId::LowCpuHighSb => &[
                "Use more Self Join operators to increase the size of intermediate results.",
                "Perform arithmetic operations on some columns.",
                "Scan a smaller table while adding more operators.",
            ],
            ScenarioId::BothLowOrHigh => &["Use or generate a benchmark database with a higher or lower Scale Factor."],
            ScenarioId::RatioOff => &[
                "Use a benchmark database of higher or lower skewness, or select a database with a more complex schema.",
            ],
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Relative deviations of the profiled query from the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gap {
    pub cpu: f64,
    pub scanned_bytes: f64,
    /// Of the CPU-time / scanned-bytes ratio.
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Accepted,
    Scenario(ScenarioId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapConfig {
    pub tolerance: f64,
    pub cpu_metric: String,
    pub scanned_bytes_metric: String,
    pub eps: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.15,
            cpu_metric: "cpu_time_ms".into(),
            scanned_bytes_metric: "scanned_bytes".into(),
            eps: 1e-9,
        }
    }
}

fn relative(profiled: f64, target: f64, eps: f64) -> f64 {
    (profiled - target) / target.abs().max(eps)
}

pub fn gap(target: &PerformanceFeature, profiled: &PerformanceFeature, schema: &FeatureSchema, cfg: &GapConfig) -> Result<Gap> {
    let index = |name: &str| {
        schema
            .metric_index(name)
            .ok_or_else(|| Error::Config(format!("metric {name:?} is required for gap classification")))
    };
    let c = index(&cfg.cpu_metric)?;
    let s = index(&cfg.scanned_bytes_metric)?;
    schema.check(target)?;
    schema.check(profiled)?;
    let eps = cfg.eps;
    let ratio = |f: &PerformanceFeature| f.metrics[c] / f.metrics[s].max(eps);
    Ok(Gap {
        cpu: relative(profiled.metrics[c], target.metrics[c], eps),
        scanned_bytes: relative(profiled.metrics[s], target.metrics[s], eps),
        ratio: relative(ratio(profiled), ratio(target), eps),
    })
}

/// Maps a gap to a verdict. Every sign pattern of the two deviations, each
/// read as low, in range or high against `tolerance`, has exactly one outcome:
///
/// | cpu \ sb | low                | in range       | high               |
/// |----------|--------------------|----------------|--------------------|
/// | low      | both_low_or_high   | lowCPU_lowSB   | lowCPU_highSB      |
/// | in range | lowCPU_lowSB       | accepted / ratio_off | lowCPU_highSB |
/// | high     | highCPU_lowSB      | highCPU_lowSB  | both_low_or_high   |
///
/// In the centre cell the magnitudes fit, so only a ratio deviation beyond
/// `tolerance` rejects the query.
pub fn classify(g: &Gap, tolerance: f64) -> Verdict {
    #[derive(PartialEq)]
    enum Sign {
        Low,
        Ok,
        High,
    }
    let sign = |d: f64| {
        if d < -tolerance {
            Sign::Low
        } else if d > tolerance {
            Sign::High
        } else {
            Sign::Ok
        }
    };
    let id = match (sign(g.cpu), sign(g.scanned_bytes)) {
        (Sign::Low, Sign::Low) | (Sign::High, Sign::High) => ScenarioId::BothLowOrHigh,
        (Sign::High, Sign::Low) | (Sign::High, Sign::Ok) => ScenarioId::HighCpuLowSb,
        (Sign::Low, Sign::High) | (Sign::Ok, Sign::High) => ScenarioId::LowCpuHighSb,
        (Sign::Low, Sign::Ok) | (Sign::Ok, Sign::Low) => ScenarioId::LowCpuLowSb,
        (Sign::Ok, Sign::Ok) => {
            if g.ratio.abs() > tolerance {
                ScenarioId::RatioOff
            } else {
                return Verdict::Accepted;
            }
        }
    };
    Verdict::Scenario(id)
}

pub fn classify_gap(
    target: &PerformanceFeature,
    profiled: &PerformanceFeature,
    schema: &FeatureSchema,
    cfg: &GapConfig,
) -> Result<(Gap, Verdict)> {
    let g = gap(target, profiled, schema, cfg)?;
    Ok((g, classify(&g, cfg.tolerance)))
}

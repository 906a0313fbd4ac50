//! Prompt rendering. The layout is line-oriented so providers (and the mock)
//! can read it back; numbers use the shortest round-trip formatting.

use std::fmt::Write as _;

use crate::catalog::DatabaseDescriptor;
use crate::csvio::fmt_f64;
use crate::feature::{FeatureSchema, PerformanceFeature};

use super::examples::{Example, ExampleSet};
use super::hints::ScenarioId;
use super::GenerationTarget;

/// Hints collected after one rejected attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct HintRound {
    /// 1-based attempt number on the current database.
    pub attempt: usize,
    pub scenario: ScenarioId,
}

pub const SECTION_DATABASE: &str = "DATABASE";
pub const SECTION_TARGET: &str = "TARGET";
pub const SECTION_POSITIVE: &str = "POSITIVE EXAMPLES (learn the query patterns)";
pub const SECTION_NEGATIVE: &str = "NEGATIVE EXAMPLES (avoid the query patterns)";
pub const SECTION_HINTS: &str = "HINTS";

fn feature_line(schema: &FeatureSchema, f: &PerformanceFeature) -> String {
    schema
        .names()
        .zip(f.values())
        .map(|(n, v)| format!("{n}={}", fmt_f64(v)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn examples(out: &mut String, title: &str, list: &[Example], schema: &FeatureSchema) {
    let _ = writeln!(out, "{title}");
    if list.is_empty() {
        out.push_str("(none)\n");
    }
    for (i, e) in list.iter().enumerate() {
        let _ = writeln!(
            out,
            "[{}] {} on {} (distance {:.6})",
            i + 1,
            e.component_id,
            e.database.key(),
            e.distance
        );
        let _ = writeln!(out, "features: {}", feature_line(schema, &e.feature));
        let _ = writeln!(out, "query:");
        for line in e.query_ref.lines() {
            let _ = writeln!(out, "    {line}");
        }
    }
    out.push('\n');
}

pub fn build_prompt(
    target: &GenerationTarget,
    set: &ExampleSet,
    database: &DatabaseDescriptor,
    schema: &FeatureSchema,
    hints: &[HintRound],
) -> String {
    let mut out = String::new();
    out.push_str("Write one SQL query for the database below whose execution profile matches the target.\n\n");

    let _ = writeln!(out, "{SECTION_DATABASE}");
    let _ = writeln!(out, "benchmark: {}", database.benchmark_name);
    let _ = writeln!(out, "scale_factor: {}", fmt_f64(database.scale_factor));
    let _ = writeln!(out, "skewness: {}", database.skewness);
    if database.schema_summary.is_empty() {
        out.push_str("tables: (no summary available)\n");
    } else {
        out.push_str("tables:\n");
        for t in &database.schema_summary {
            let _ = write!(out, "- {}: {} rows", t.name, t.row_count);
            if !t.columns.is_empty() {
                let _ = write!(out, " ({})", t.columns.join(", "));
            }
            out.push('\n');
        }
    }
    out.push('\n');

    let _ = writeln!(out, "{SECTION_TARGET}");
    let _ = writeln!(out, "duration_ms: {}", fmt_f64(target.duration_ms));
    for (n, v) in schema.names().zip(target.feature.values()) {
        let _ = writeln!(out, "{n}: {}", fmt_f64(v));
    }
    out.push('\n');

    examples(&mut out, SECTION_POSITIVE, &set.positives, schema);
    examples(&mut out, SECTION_NEGATIVE, &set.negatives, schema);

    if !hints.is_empty() {
        let _ = writeln!(out, "{SECTION_HINTS}");
        for h in hints {
            let _ = writeln!(out, "attempt {} ({}):", h.attempt, h.scenario);
            for text in h.scenario.hint_texts() {
                let _ = writeln!(out, "- {text}");
            }
        }
        out.push('\n');
    }
    out.push_str("Answer with the SQL text only.\n");
    out
}

/// `name: value` lines of a section, up to the next blank line.
pub fn section_values<'a>(prompt: &'a str, section: &str) -> Vec<(&'a str, &'a str)> {
    let mut lines = prompt.lines().skip_while(|l| *l != section);
    lines.next();
    lines
        .take_while(|l| !l.trim().is_empty())
        .filter_map(|l| l.split_once(": "))
        .collect()
}

/// Number of hint rounds present in a prompt.
pub fn hint_rounds(prompt: &str) -> usize {
    prompt
        .lines()
        .skip_while(|l| *l != SECTION_HINTS)
        .take_while(|l| !l.trim().is_empty())
        .filter(|l| l.starts_with("attempt "))
        .count()
}

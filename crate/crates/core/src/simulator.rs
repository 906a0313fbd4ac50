//! Replays a schedule through the processor-sharing model and emits a trace.

use crate::catalog::Catalog;
use crate::error::Result;
use crate::scheduler::{self, Schedule};
use crate::trace::{QueryRecord, Trace, TraceMode};

/// The synthetic trace produced by a replay, plus raw completion times.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedTrace {
    pub records: Vec<QueryRecord>,
    pub completions_ms: Vec<f64>,
}

impl ReplayedTrace {
    pub fn into_trace(self, catalog: &Catalog, mode: TraceMode) -> Trace {
        Trace {
            schema: catalog.schema().clone(),
            mode,
            records: self.records,
        }
    }
}

/// One record per schedule entry, in entry order: arrival is the start,
/// duration the simulated completion minus start rounded up to whole
/// milliseconds, and the feature is the component's profiled feature.
pub fn replay(schedule: &Schedule, catalog: &Catalog, cores: u32) -> Result<ReplayedTrace> {
    let instances = schedule
        .entries
        .iter()
        .map(|e| Ok((e.start_ts, catalog.get(&e.component_id)?)))
        .collect::<Result<Vec<_>>>()?;
    let runs = scheduler::execute(&instances, cores);
    let records = schedule
        .entries
        .iter()
        .zip(&instances)
        .zip(&runs)
        .map(|((e, (_, c)), run)| QueryRecord {
            query_id: format!("w{}-{}-{}", e.window_index, e.component_id, e.instance_index),
            arrival_ts: e.start_ts,
            duration_ms: run.duration_ms,
            metrics: c.feature.metrics.clone(),
            operators: c.feature.operators.clone(),
        })
        .collect();
    Ok(ReplayedTrace {
        records,
        completions_ms: runs.iter().map(|r| r.completion_ms).collect(),
    })
}

//! Workload synthesis from query-level trace statistics.
//!
//! The pipeline aggregates a trace into window and interval targets ([`trace`]),
//! selects per-window multiplicities of profiled benchmark components ([`selector`]),
//! assigns start timestamps by simulated annealing ([`scheduler`]), replays the
//! result through a processor-sharing simulator ([`simulator`]) and scores it
//! ([`metrics`]). When the component pool cannot fit the targets, [`augmenter`]
//! asks a language-model provider for new components.

pub mod augmenter;
pub mod catalog;
pub mod config;
mod csvio;
pub mod error;
pub mod feature;
pub mod metrics;
pub mod pipeline;
pub mod scheduler;
pub mod seed;
pub mod selector;
pub mod simulator;
pub mod trace;

pub use catalog::{Catalog, DatabaseDescriptor, Executor, Origin, SimulatedExecutor, WorkloadComponent};
pub use error::{Error, Result};
pub use feature::{FeatureSchema, PerformanceFeature};
pub use trace::{build_targets, ingest_trace, AggregationSpec, QueryRecord, Targets, TimeGrid, Trace, TraceMode};

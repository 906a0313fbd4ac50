//! `wlsynth`: run the workload synthesis pipeline or any single stage of it.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use wlsynth_core::config::{Config, TotalCapSetting};
use wlsynth_core::pipeline::{self, Layout, Stage, StageContext, StageError};

#[derive(Parser)]
#[command(name = "wlsynth", version, about = "Synthesize a replayable workload from trace statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate the trace.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Write the parsed trace back out in canonical form.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Aggregate the trace into window and interval targets.
    Targets(Common),
    /// Choose component multiplicities per window (or per query with --query-level).
    Select(Common),
    /// Generate components for badly fitted windows and re-solve.
    Augment(Common),
    /// Assign start timestamps to the selected instances.
    Schedule(Common),
    /// Replay the schedule through the execution simulator.
    Replay(Common),
    /// Score the replayed trace against the targets.
    Evaluate(Common),
    /// Run every stage.
    Pipeline(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window_ms: Option<u64>,
    #[arg(long)]
    interval_ms: Option<u64>,
    #[arg(long)]
    cores: Option<u32>,
    /// Per-component repetition cap.
    #[arg(long)]
    y: Option<u32>,
    /// Total instance cap: a count, or a multiple of the window's query count such as `2x`.
    #[arg(long)]
    z: Option<TotalCapSetting>,
    /// Use random timestamps instead of annealing.
    #[arg(long)]
    skip_ta: bool,
    #[arg(long)]
    skip_augment: bool,
    #[arg(long, value_parser = ["one_to_one", "one_to_many"])]
    query_level: Option<String>,
    /// Worker threads for per-window stages.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<Config, StageError> {
        let mut cfg = Config::load(&self.config).stage(Stage::Config)?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.window_ms {
            cfg.window_ms = v;
        }
        if let Some(v) = self.interval_ms {
            cfg.interval_ms = v;
        }
        if let Some(v) = self.cores {
            cfg.cores = v;
        }
        if let Some(v) = self.y {
            cfg.y = v;
        }
        if let Some(v) = &self.z {
            cfg.z = v.clone();
        }
        cfg.skip_ta |= self.skip_ta;
        cfg.skip_augment |= self.skip_augment;
        if let Some(v) = &self.query_level {
            cfg.query_level = Some(v.clone());
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        cfg.validate().stage(Stage::Config)?;
        Ok(cfg)
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.out)
    }
}

fn report_json(report: &wlsynth_core::metrics::FidelityReport) -> serde_json::Value {
    let rows: Vec<_> = report
        .rows
        .iter()
        .map(|r| {
            json!({
                "level": r.level.as_str(),
                "dimension": r.dimension,
                "mae": r.mae,
                "gmape": r.gmape,
                "gmqe": r.gmqe,
                "n": r.n,
            })
        })
        .collect();
    json!({ "metrics": rows })
}

fn run(command: Command) -> Result<serde_json::Value, StageError> {
    match command {
        Command::Ingest { common, export } => {
            let cfg = common.load()?;
            let trace = pipeline::load_trace(&cfg).stage(Stage::Ingest)?;
            if let Some(path) = &export {
                trace.export(path).stage(Stage::Ingest)?;
            }
            let first = trace.records.iter().map(|r| r.arrival_ts).min();
            let last = trace.records.iter().map(|r| r.arrival_ts).max();
            Ok(json!({
                "records": trace.records.len(),
                "first_arrival_ts": first,
                "last_arrival_ts": last,
                "metrics": cfg.metrics,
                "operators": cfg.operators,
            }))
        }
        Command::Targets(common) => {
            let cfg = common.load()?;
            let trace = pipeline::load_trace(&cfg).stage(Stage::Ingest)?;
            let targets = pipeline::run_targets(&cfg, &trace, &common.layout()).stage(Stage::Targets)?;
            Ok(json!({
                "windows": targets.windows.len(),
                "intervals": targets.intervals.len(),
                "start_ts": targets.grid.start_ts,
            }))
        }
        Command::Select(common) => {
            let cfg = common.load()?;
            let layout = common.layout();
            pipeline::clear_augmentation(&layout).stage(Stage::Select)?;
            let targets = pipeline::load_targets(&cfg, &layout).stage(Stage::Targets)?;
            let catalog = pipeline::load_base_catalog(&cfg).stage(Stage::Ingest)?;
            let plans = match cfg.query_level().stage(Stage::Config)? {
                Some(level) => {
                    let trace = pipeline::load_trace(&cfg).stage(Stage::Ingest)?;
                    pipeline::run_query_level(&cfg, level, &trace, &targets, &catalog, &layout)
                        .stage(Stage::Select)?
                        .0
                }
                None => pipeline::run_select(&cfg, &targets, &catalog, &layout).stage(Stage::Select)?,
            };
            Ok(json!({
                "windows": plans.len(),
                "total_objective": plans.iter().map(|p| p.objective_value).sum::<f64>(),
                "approximate_windows": plans.iter().filter(|p| p.approximate).count(),
            }))
        }
        Command::Augment(common) => {
            let cfg = common.load()?;
            let layout = common.layout();
            let trace = pipeline::load_trace(&cfg).stage(Stage::Ingest)?;
            let targets = pipeline::load_targets(&cfg, &layout).stage(Stage::Targets)?;
            let catalog = pipeline::load_base_catalog(&cfg).stage(Stage::Ingest)?;
            let plans = pipeline::load_plans(&cfg, &layout, &targets, &catalog).stage(Stage::Select)?;
            let provider = pipeline::make_provider(&cfg);
            let out = pipeline::run_augment(&cfg, &trace, &targets, &plans, &catalog, provider.as_ref(), &layout)
                .stage(Stage::Augment)?;
            Ok(json!({
                "bad_windows": out.outcome.bad_windows,
                "generation_targets": out.outcome.targets.len(),
                "added": out.outcome.added,
                "failures": out.outcome.failures().map(|f| json!({"target": f.target_id, "reason": f.reason})).collect::<Vec<_>>(),
                "total_objective": out.plans.iter().map(|p| p.objective_value).sum::<f64>(),
            }))
        }
        Command::Schedule(common) => {
            let cfg = common.load()?;
            let layout = common.layout();
            if cfg.query_level().stage(Stage::Config)?.is_some() {
                // query-level matching already fixed the start times
                return Ok(json!({ "skipped": "query-level schedules are written by select" }));
            }
            let targets = pipeline::load_targets(&cfg, &layout).stage(Stage::Targets)?;
            let catalog = pipeline::load_working_catalog(&cfg, &layout).stage(Stage::Ingest)?;
            let plans = pipeline::load_plans(&cfg, &layout, &targets, &catalog).stage(Stage::Select)?;
            let schedule = pipeline::run_schedule(&cfg, &targets, &plans, &catalog, &layout).stage(Stage::Schedule)?;
            Ok(json!({ "instances": schedule.entries.len(), "random": cfg.skip_ta }))
        }
        Command::Replay(common) => {
            let cfg = common.load()?;
            let layout = common.layout();
            let catalog = pipeline::load_working_catalog(&cfg, &layout).stage(Stage::Ingest)?;
            let schedule = wlsynth_core::scheduler::Schedule::read_csv(layout.schedule()).stage(Stage::Schedule)?;
            let trace = pipeline::run_replay(&cfg, &schedule, &catalog, &layout).stage(Stage::Replay)?;
            Ok(json!({ "records": trace.records.len() }))
        }
        Command::Evaluate(common) => {
            let cfg = common.load()?;
            let layout = common.layout();
            let targets = pipeline::load_targets(&cfg, &layout).stage(Stage::Targets)?;
            let replayed = pipeline::load_replay(&cfg, &layout).stage(Stage::Replay)?;
            let report = pipeline::run_evaluate(&cfg, &targets, &replayed, &layout).stage(Stage::Evaluate)?;
            Ok(report_json(&report))
        }
        Command::Pipeline(common) => {
            let cfg = common.load()?;
            let summary = pipeline::run_pipeline(&cfg, &common.out)?;
            Ok(serde_json::to_value(summary).unwrap_or_default())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let err = json!({
                "error": {
                    "stage": e.stage,
                    "message": e.source.to_string(),
                }
            });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}

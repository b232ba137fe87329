//! Fixed-workload benchmark harness: generate a trace, synthesize a plan
//! with the communication optimizer, execute it concurrently, and report
//! wall-clock throughput and latency percentiles per worker count.

use serde::Serialize;

use crate::apps::{dispatch, generate, AppHarness, AppKind, AppState, AppVisitor, GenConfig};
use crate::optimizer::{optimize_plan, rates_from_streams};

use super::{run_plan, RunOptions, RuntimeError};

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    /// Number of parallel value streams (and hence leaf workers).
    pub workers: u32,
    pub events: u64,
    pub seconds: f64,
    pub events_per_sec: f64,
    pub p10_us: Option<f64>,
    pub p50_us: Option<f64>,
    pub p90_us: Option<f64>,
    pub root_joins: u64,
    pub leaf_events: u64,
}

pub fn csv_header() -> &'static str {
    "workers,events,seconds,events_per_sec,p10_us,p50_us,p90_us,root_joins,leaf_events"
}

pub fn csv_row(row: &BenchRow) -> String {
    let p = |v: Option<f64>| v.map_or(String::from(""), |x| format!("{x:.1}"));
    format!(
        "{},{},{:.4},{:.0},{},{},{},{},{}",
        row.workers,
        row.events,
        row.seconds,
        row.events_per_sec,
        p(row.p10_us),
        p(row.p50_us),
        p(row.p90_us),
        row.root_joins,
        row.leaf_events
    )
}

struct OneRun {
    config: GenConfig,
    kind: AppKind,
}

impl AppVisitor for OneRun {
    type Out = Result<BenchRow, RuntimeError>;

    fn visit<S: AppState>(self, harness: AppHarness<S>) -> Self::Out {
        let streams = generate(self.kind, &self.config);
        let rates = rates_from_streams(&streams);
        let plan = optimize_plan(&harness.program, &rates)
            .map_err(|e| RuntimeError::InitFailure(e.to_string()))?;
        let outcome =
            run_plan(&harness.program, &plan, &streams, &RunOptions::concurrent())?;
        let root = plan.roots[0];
        let root_joins = outcome.stats.per_worker[root.0].joins;
        let leaf_events: u64 = plan
            .workers
            .iter()
            .filter(|w| w.children.is_empty())
            .map(|w| outcome.stats.per_worker[w.id.0].events_processed)
            .sum();
        Ok(BenchRow {
            workers: self.config.streams,
            events: outcome.stats.total_events,
            seconds: outcome.stats.wall_seconds,
            events_per_sec: outcome.stats.events_per_sec,
            p10_us: outcome.stats.latency_p10_us,
            p50_us: outcome.stats.latency_p50_us,
            p90_us: outcome.stats.latency_p90_us,
            root_joins,
            leaf_events,
        })
    }
}

/// Runs the workload once per worker count. `events` is the total number of
/// parallelizable events, held constant across counts.
pub fn run_bench(
    kind: AppKind,
    worker_counts: &[u32],
    events: u64,
    sync_ratio: u64,
    heartbeat_period: u64,
    seed: u64,
) -> Result<Vec<BenchRow>, RuntimeError> {
    let mut rows = Vec::with_capacity(worker_counts.len());
    for &workers in worker_counts {
        let config = GenConfig {
            streams: workers,
            events,
            sync_ratio,
            heartbeat_period,
            keys: 2,
            seed,
        };
        rows.push(dispatch(kind, &config, OneRun { config: config.clone(), kind })?);
    }
    Ok(rows)
}

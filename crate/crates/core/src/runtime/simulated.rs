//! Deterministic single-threaded execution: every stream and every worker is
//! a schedulable unit, and a seeded RNG picks uniformly among the enabled
//! ones, giving a fair but adversarially varied interleaving. When no unit
//! can make progress and input remains buffered somewhere, the run reports a
//! deadlock instead of hanging.

use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::apps::AppState;
use crate::model::Message;
use crate::program::DgsProgram;

use super::worker::{Effect, WorkerCore, WorkerMsg};
use super::{percentile_us, RunContext, RunOptions, RunOutcome, RunStats, RuntimeError};

pub(crate) fn run<S: AppState>(
    program: &DgsProgram<S>,
    ctx: &RunContext,
    streams: &[Vec<Message>],
    options: &RunOptions,
    seed: u64,
) -> Result<RunOutcome, RuntimeError> {
    let mut initial = ctx.initial_states(program)?;
    let n = ctx.plan.workers.len();
    let mut workers: Vec<WorkerCore<S>> = (0..n)
        .map(|i| {
            WorkerCore::new(
                program,
                ctx,
                crate::plan::WorkerId(i),
                initial.remove(&crate::plan::WorkerId(i)),
                options.checkpoints.clone(),
                options.capture_release_logs,
            )
        })
        .collect();
    let mut inboxes: Vec<VecDeque<WorkerMsg<S>>> = (0..n).map(|_| VecDeque::new()).collect();
    let mut cursors = vec![0usize; streams.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();

    // Announce initial frontiers top-down so that workers owning nothing
    // (pure routers) unblock their subtrees without waiting for traffic.
    for worker in workers.iter_mut() {
        let mut effects: Vec<Effect<S>> = Vec::new();
        worker.emit_frontier(&mut effects);
        for effect in effects {
            let Effect::Send { to, msg } = effect;
            inboxes[to.0].push_back(msg);
        }
    }

    let mut units: Vec<Unit> = Vec::new();
    loop {
        units.clear();
        for (i, stream) in streams.iter().enumerate() {
            if cursors[i] < stream.len() {
                units.push(Unit::Feeder(i));
            }
        }
        for (i, w) in workers.iter().enumerate() {
            if !inboxes[i].is_empty() || w.has_ready() {
                units.push(Unit::Worker(i));
            }
        }
        let Some(&unit) = pick(&units, &mut rng) else {
            break;
        };
        match unit {
            Unit::Feeder(i) => {
                let msg = &streams[i][cursors[i]];
                cursors[i] += 1;
                deliver(ctx, msg, &mut inboxes);
            }
            Unit::Worker(i) => {
                let mut effects: Vec<Effect<S>> = Vec::new();
                if let Some(msg) = inboxes[i].pop_front() {
                    workers[i].handle(msg, &mut effects)?;
                } else {
                    workers[i].step_ready(&mut effects)?;
                }
                workers[i].emit_frontier(&mut effects);
                for effect in effects {
                    let Effect::Send { to, msg } = effect;
                    inboxes[to.0].push_back(msg);
                }
            }
        }
    }

    let stalled: Vec<String> = workers
        .iter()
        .filter(|w| !w.quiescent())
        .map(|w| w.describe_stall())
        .collect();
    if !stalled.is_empty() {
        return Err(RuntimeError::Deadlock(stalled.join("; ")));
    }

    Ok(assemble(workers, start.elapsed(), false))
}

#[derive(Clone, Copy)]
enum Unit {
    Feeder(usize),
    Worker(usize),
}

fn pick<'a>(units: &'a [Unit], rng: &mut ChaCha8Rng) -> Option<&'a Unit> {
    if units.is_empty() {
        None
    } else {
        Some(&units[rng.gen_range(0..units.len())])
    }
}

/// Delivers one stream message: the event goes to its owner, and stream
/// progress goes to every worker owning tags on that stream.
fn deliver<S: AppState>(
    ctx: &RunContext,
    msg: &Message,
    inboxes: &mut [VecDeque<WorkerMsg<S>>],
) {
    let stream = msg.itag().stream;
    let frontier = msg.okey().successor();
    let owners = ctx.stream_owners.get(&stream).map(Vec::as_slice).unwrap_or(&[]);
    let event_owner = match msg {
        Message::Event(e) => {
            let owner = ctx.owner.get(&e.itag).copied().expect("validated coverage");
            inboxes[owner.0].push_back(WorkerMsg::Event(e.clone(), None));
            Some(owner)
        }
        Message::Heartbeat(_) => None,
    };
    for &w in owners {
        if Some(w) != event_owner {
            inboxes[w.0].push_back(WorkerMsg::Progress { stream, frontier });
        }
    }
}

pub(crate) fn assemble<S: AppState>(
    workers: Vec<WorkerCore<'_, S>>,
    wall: std::time::Duration,
    with_latency: bool,
) -> RunOutcome {
    let mut outputs = Vec::new();
    let mut checkpoints = Vec::new();
    let mut latencies = Vec::new();
    let mut logs = std::collections::BTreeMap::new();
    let mut stats = RunStats::default();
    for w in workers {
        let captures = w.captures_log();
        let id = w.id;
        stats.total_events += w.stats.events_processed;
        stats.per_worker.push(w.stats);
        outputs.extend(w.outputs);
        checkpoints.extend(w.checkpoints);
        latencies.extend(w.latencies);
        if captures {
            logs.insert(id, w.release_log);
        }
    }
    checkpoints.sort_by_key(|c| c.o_value);
    stats.total_outputs = outputs.len() as u64;
    stats.wall_seconds = wall.as_secs_f64();
    stats.events_per_sec = if stats.wall_seconds > 0.0 {
        stats.total_events as f64 / stats.wall_seconds
    } else {
        0.0
    };
    if with_latency {
        stats.latency_p10_us = percentile_us(&mut latencies, 0.10);
        stats.latency_p50_us = percentile_us(&mut latencies, 0.50);
        stats.latency_p90_us = percentile_us(&mut latencies, 0.90);
    }
    RunOutcome {
        outputs,
        stats,
        checkpoints,
        release_logs: if logs.is_empty() { None } else { Some(logs) },
    }
}

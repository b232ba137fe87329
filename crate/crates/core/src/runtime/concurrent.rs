//! Thread-per-worker execution. A router thread merges the input streams in
//! event order and fans messages out over std mpsc channels; workers block
//! on their inbox, run the shared state machine, and shut down top-down once
//! the router and their parent have finished.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use crate::apps::AppState;
use crate::model::Message;
use crate::plan::WorkerId;
use crate::program::DgsProgram;

use super::simulated::assemble;
use super::worker::{Effect, ShutdownSource, WorkerCore, WorkerMsg};
use super::{RunContext, RunOptions, RunOutcome, RuntimeError};

/// Routed messages are grouped into batches of this size per target to
/// amortize channel overhead on high-rate streams.
const BATCH: usize = 256;

/// Blocking-receive timeout; a concurrent run that waits this long without
/// any message is reported as stalled rather than hanging forever.
const STALL_TIMEOUT: Duration = Duration::from_secs(30);

pub(crate) fn run<S: AppState>(
    program: &DgsProgram<S>,
    ctx: &RunContext,
    streams: &[Vec<Message>],
    options: &RunOptions,
) -> Result<RunOutcome, RuntimeError> {
    let mut initial = ctx.initial_states(program)?;
    let n = ctx.plan.workers.len();
    let mut txs: Vec<Sender<WorkerMsg<S>>> = Vec::with_capacity(n);
    let mut rxs: Vec<Option<Receiver<WorkerMsg<S>>>> = Vec::with_capacity(n);
    for _ in 0..n {
        let (tx, rx) = channel();
        txs.push(tx);
        rxs.push(Some(rx));
    }
    let start = Instant::now();

    let result: Result<Vec<WorkerCore<S>>, RuntimeError> = std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(n);
        for (i, rx_slot) in rxs.iter_mut().enumerate() {
            let rx = rx_slot.take().expect("receiver unclaimed");
            let txs = txs.clone();
            let core = WorkerCore::new(
                program,
                ctx,
                WorkerId(i),
                initial.remove(&WorkerId(i)),
                options.checkpoints.clone(),
                options.capture_release_logs,
            );
            handles.push(scope.spawn(move || worker_loop(core, rx, txs)));
        }

        route_input(ctx, streams, &txs);
        for tx in &txs {
            let _ = tx.send(WorkerMsg::Shutdown(ShutdownSource::Router));
        }
        drop(txs);

        let mut cores = Vec::with_capacity(n);
        for handle in handles {
            match handle.join() {
                Ok(Ok(core)) => cores.push(core),
                Ok(Err(e)) => return Err(e),
                Err(_) => {
                    return Err(RuntimeError::Stalled("worker thread panicked".into()))
                }
            }
        }
        Ok(cores)
    });

    let cores = result?;
    Ok(assemble(cores, start.elapsed(), true))
}

/// Merges all streams by event order and routes each message: events to
/// their owner (stamped for latency), stream progress to every co-owner of
/// the stream. Consecutive progress updates to the same worker collapse.
fn route_input<S: AppState>(
    ctx: &RunContext,
    streams: &[Vec<Message>],
    txs: &[Sender<WorkerMsg<S>>],
) {
    let n = txs.len();
    let mut buffers: Vec<Vec<WorkerMsg<S>>> = (0..n).map(|_| Vec::new()).collect();
    let mut cursors = vec![0usize; streams.len()];
    loop {
        let mut best: Option<(crate::model::OKey, usize)> = None;
        for (i, stream) in streams.iter().enumerate() {
            if let Some(msg) = stream.get(cursors[i]) {
                let k = msg.okey();
                if best.is_none_or(|(bk, _)| k < bk) {
                    best = Some((k, i));
                }
            }
        }
        let Some((_, i)) = best else { break };
        let msg = &streams[i][cursors[i]];
        cursors[i] += 1;

        let stream = msg.itag().stream;
        let frontier = msg.okey().successor();
        let owners = ctx.stream_owners.get(&stream).map(Vec::as_slice).unwrap_or(&[]);
        let event_owner = match msg {
            Message::Event(e) => {
                let owner = ctx.owner.get(&e.itag).copied().expect("validated coverage");
                push(&mut buffers[owner.0], WorkerMsg::Event(e.clone(), Some(Instant::now())));
                flush_if_full(&mut buffers[owner.0], &txs[owner.0]);
                Some(owner)
            }
            Message::Heartbeat(_) => None,
        };
        for &w in owners {
            if Some(w) != event_owner {
                push(&mut buffers[w.0], WorkerMsg::Progress { stream, frontier });
                flush_if_full(&mut buffers[w.0], &txs[w.0]);
            }
        }
    }
    for (i, buffer) in buffers.into_iter().enumerate() {
        if !buffer.is_empty() {
            let _ = txs[i].send(WorkerMsg::Batch(buffer));
        }
    }
}

fn push<S>(buffer: &mut Vec<WorkerMsg<S>>, msg: WorkerMsg<S>) {
    // Progress supersedes earlier progress for the same stream.
    if let WorkerMsg::Progress { stream, .. } = &msg {
        if let Some(WorkerMsg::Progress { stream: last, .. }) = buffer.last() {
            if last == stream {
                buffer.pop();
            }
        }
    }
    buffer.push(msg);
}

fn flush_if_full<S>(buffer: &mut Vec<WorkerMsg<S>>, tx: &Sender<WorkerMsg<S>>) {
    if buffer.len() >= BATCH {
        let _ = tx.send(WorkerMsg::Batch(std::mem::take(buffer)));
    }
}

fn worker_loop<'p, S: AppState>(
    mut core: WorkerCore<'p, S>,
    rx: Receiver<WorkerMsg<S>>,
    txs: Vec<Sender<WorkerMsg<S>>>,
) -> Result<WorkerCore<'p, S>, RuntimeError> {
    let mut effects: Vec<Effect<S>> = Vec::new();
    core.emit_frontier(&mut effects);
    for effect in effects.drain(..) {
        let Effect::Send { to, msg } = effect;
        let _ = txs[to.0].send(msg);
    }
    loop {
        if core.may_shut_down() {
            for &c in core.children() {
                let _ = txs[c.0].send(WorkerMsg::Shutdown(ShutdownSource::Parent));
            }
            return Ok(core);
        }
        let msg = match rx.recv_timeout(STALL_TIMEOUT) {
            Ok(msg) => msg,
            Err(RecvTimeoutError::Timeout) => {
                return Err(RuntimeError::Stalled(core.describe_stall()));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(RuntimeError::Stalled(format!(
                    "{}: channel closed before shutdown",
                    core.describe_stall()
                )));
            }
        };
        core.handle(msg, &mut effects)?;
        core.drain_ready(&mut effects)?;
        core.emit_frontier(&mut effects);
        for effect in effects.drain(..) {
            let Effect::Send { to, msg } = effect;
            let _ = txs[to.0].send(msg);
        }
    }
}

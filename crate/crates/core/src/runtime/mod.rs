//! Plan execution. Each worker couples a selective-reordering mailbox with a
//! protocol state machine; workers exchange events, join requests and
//! responses, forked states, and progress frontiers over reliable in-order
//! channels. A seed-deterministic single-threaded simulation and a
//! thread-per-worker concurrent mode share the same worker logic.

mod mailbox;
mod worker;

mod concurrent;
mod simulated;

pub mod bench;

pub use mailbox::{Mailbox, MailboxError, Released};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::apps::AppState;
use crate::model::{
    assign_seqs, collect_event_itags, heartbeat, validate_input_instance, Event, ImplTag,
    InputViolation, Message, OKey, StreamId, Tag, TagPredicate,
};
use crate::plan::{validate_plan, PlanViolation, SyncPlan, WorkerId};
use crate::program::{DgsProgram, Output, ProgramViolation};

/// How a plan is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Single-threaded, seed-deterministic fair interleaving of worker steps
    /// and stream deliveries. Detects deadlocks.
    Simulated { seed: u64 },
    /// One thread per worker plus a router thread. Relies on correct
    /// heartbeat injection for progress.
    Concurrent,
}

pub type CheckpointPredicate = Arc<dyn Fn(&Event) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct RunOptions {
    pub mode: Mode,
    /// When set, each root join whose triggering event satisfies the
    /// predicate emits a checkpoint of the joined state.
    pub checkpoints: Option<CheckpointPredicate>,
    /// Reject inputs that are not valid input instances. Disable only to
    /// observe deadlock behavior on malformed inputs.
    pub validate_input: bool,
    /// Record each worker's release log for mailbox-validity checking.
    pub capture_release_logs: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mode: Mode::Simulated { seed: 0 },
            checkpoints: None,
            validate_input: true,
            capture_release_logs: false,
        }
    }
}

impl RunOptions {
    pub fn simulated(seed: u64) -> Self {
        RunOptions { mode: Mode::Simulated { seed }, ..Default::default() }
    }

    pub fn concurrent() -> Self {
        RunOptions { mode: Mode::Concurrent, ..Default::default() }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct WorkerStats {
    pub worker: usize,
    pub events_processed: u64,
    pub forks: u64,
    pub joins: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunStats {
    pub per_worker: Vec<WorkerStats>,
    pub total_events: u64,
    pub total_outputs: u64,
    pub wall_seconds: f64,
    pub events_per_sec: f64,
    /// Ingestion-to-output latency percentiles; concurrent mode only.
    pub latency_p10_us: Option<f64>,
    pub latency_p50_us: Option<f64>,
    pub latency_p90_us: Option<f64>,
}

/// Snapshot of the root's joined state, taken when the root processed the
/// synchronizing event at `o_value`. The state equals the sequential fold of
/// all events up to and including that point.
#[derive(Debug, Clone, Serialize)]
pub struct CheckpointRecord {
    pub o_value: OKey,
    pub state: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseKind {
    Event,
    JoinRequest,
}

/// One entry of a worker's release log: an event it processed, or a join
/// request standing in for an ancestor's event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReleaseRecord {
    pub itag: ImplTag,
    pub okey: OKey,
    pub kind: ReleaseKind,
}

#[derive(Debug)]
pub struct RunOutcome {
    /// All outputs, merged across workers. Order between workers is not
    /// meaningful; compare as a multiset.
    pub outputs: Vec<Output>,
    pub stats: RunStats,
    pub checkpoints: Vec<CheckpointRecord>,
    pub release_logs: Option<BTreeMap<WorkerId, Vec<ReleaseRecord>>>,
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid program: {0:?}")]
    InvalidProgram(Vec<ProgramViolation>),
    #[error("invalid plan: {0:?}")]
    InvalidPlan(Vec<PlanViolation>),
    #[error("invalid input instance: {0:?}")]
    InvalidInput(Vec<InputViolation>),
    #[error("plan cannot be initialized: {0}")]
    InitFailure(String),
    #[error("deadlock: {0}")]
    Deadlock(String),
    #[error("mailbox: {0}")]
    Mailbox(#[from] MailboxError),
    #[error("protocol violation at worker {0}: {1}")]
    Protocol(usize, String),
    #[error("concurrent run stalled: {0}")]
    Stalled(String),
}

/// Executes `plan` over `streams`. Inputs are validated first; on success
/// all streams are fully consumed and every worker quiesces.
pub fn run_plan<S: AppState>(
    program: &DgsProgram<S>,
    plan: &SyncPlan,
    streams: &[Vec<Message>],
    options: &RunOptions,
) -> Result<RunOutcome, RuntimeError> {
    let program_violations = program.validate();
    if !program_violations.is_empty() {
        return Err(RuntimeError::InvalidProgram(program_violations));
    }
    let mut streams = streams.to_vec();
    assign_seqs(&mut streams);
    let event_itags = collect_event_itags(&streams);
    let mut universe: BTreeSet<ImplTag> = event_itags;
    for w in &plan.workers {
        universe.extend(w.itags.iter().cloned());
    }
    let plan_violations = validate_plan(program, plan, &universe);
    if !plan_violations.is_empty() {
        return Err(RuntimeError::InvalidPlan(plan_violations));
    }
    if options.validate_input {
        let input_violations = validate_input_instance(&streams);
        if !input_violations.is_empty() {
            return Err(RuntimeError::InvalidInput(input_violations));
        }
    }
    let ctx = RunContext::new(program, plan)?;
    match options.mode {
        Mode::Simulated { seed } => simulated::run(program, &ctx, &streams, options, seed),
        Mode::Concurrent => concurrent::run(program, &ctx, &streams, options),
    }
}

/// Precomputed routing and tree structure shared by both execution modes.
pub(crate) struct RunContext {
    pub plan: SyncPlan,
    /// Owner of each implementation tag.
    pub owner: BTreeMap<ImplTag, WorkerId>,
    /// Workers owning at least one tag of each stream; stream progress is
    /// delivered to all of them.
    pub stream_owners: BTreeMap<StreamId, Vec<WorkerId>>,
    pub parents: Vec<Option<WorkerId>>,
    /// Per internal worker: combined owned-tag predicates of its two child
    /// subtrees, handed to its fork.
    pub child_preds: Vec<Option<(TagPredicate, TagPredicate)>>,
}

impl RunContext {
    pub fn new<S>(_program: &DgsProgram<S>, plan: &SyncPlan) -> Result<Self, RuntimeError> {
        let mut owner = BTreeMap::new();
        let mut stream_owners: BTreeMap<StreamId, BTreeSet<WorkerId>> = BTreeMap::new();
        for w in &plan.workers {
            for itag in &w.itags {
                owner.insert(itag.clone(), w.id);
                stream_owners.entry(itag.stream).or_default().insert(w.id);
            }
        }
        let mut parents = vec![None; plan.workers.len()];
        for w in &plan.workers {
            for &c in &w.children {
                parents[c.0] = Some(w.id);
            }
        }
        let child_preds = plan
            .workers
            .iter()
            .map(|w| {
                if w.children.len() == 2 {
                    Some((
                        plan.subtree_pred(w.children[0]),
                        plan.subtree_pred(w.children[1]),
                    ))
                } else {
                    None
                }
            })
            .collect();
        Ok(RunContext {
            plan: plan.clone(),
            owner,
            stream_owners: stream_owners
                .into_iter()
                .map(|(s, set)| (s, set.into_iter().collect()))
                .collect(),
            parents,
            child_preds,
        })
    }

    /// Distributes the initial state over the forest: a chain of forks peels
    /// off one tree at a time, then each tree's internal nodes fork their
    /// share down to the leaves. Only leaves end up holding state.
    pub fn initial_states<S: AppState>(
        &self,
        program: &DgsProgram<S>,
    ) -> Result<BTreeMap<WorkerId, S>, RuntimeError> {
        let mut states = BTreeMap::new();
        let mut remaining = program.init.clone();
        let mut remaining_type = 0usize;
        for (i, &root) in self.plan.roots.iter().enumerate() {
            let root_type = self.plan.node(root).state_type;
            if i + 1 == self.plan.roots.len() {
                if root_type != remaining_type {
                    return Err(RuntimeError::InitFailure(format!(
                        "root {root} needs state type {root_type}, have {remaining_type}"
                    )));
                }
                self.distribute(program, root, remaining, &mut states)?;
                return Ok(states);
            }
            let tree_pred = self.plan.subtree_pred(root);
            let rest_pred = self.plan.roots[i + 1..]
                .iter()
                .map(|&r| self.plan.subtree_pred(r))
                .fold(TagPredicate::empty(), |acc, p| acc.union(&p));
            let fork = program
                .forks
                .iter()
                .find(|f| f.from == remaining_type && f.to.0 == root_type)
                .ok_or_else(|| {
                    RuntimeError::InitFailure(format!(
                        "no fork splits state type {remaining_type} for forest root {root}"
                    ))
                })?;
            let (s_tree, s_rest) = (fork.func)(remaining, &tree_pred, &rest_pred);
            self.distribute(program, root, s_tree, &mut states)?;
            remaining = s_rest;
            remaining_type = fork.to.1;
        }
        // Empty forest: no workers, nothing to distribute.
        Ok(states)
    }

    fn distribute<S: AppState>(
        &self,
        program: &DgsProgram<S>,
        node: WorkerId,
        state: S,
        states: &mut BTreeMap<WorkerId, S>,
    ) -> Result<(), RuntimeError> {
        let w = self.plan.node(node);
        if w.children.is_empty() {
            states.insert(node, state);
            return Ok(());
        }
        let fork = w.fork.expect("validated internal node has a fork binding");
        let (lp, rp) = self.child_preds[node.0].as_ref().expect("internal node");
        let (sl, sr) = (program.forks[fork].func)(state, lp, rp);
        self.distribute(program, w.children[0], sl, states)?;
        self.distribute(program, w.children[1], sr, states)
    }
}

/// Adds heartbeats to event streams: one in every timestamp gap of at least
/// `period` ticks between consecutive messages of a stream, plus a terminal
/// heartbeat just past the last event of the whole instance on every stream.
/// The result of heartbeating a valid-shaped input passes
/// `validate_input_instance` even when some streams are silent.
///
/// Heartbeats reuse the tag of the preceding event on their stream (progress
/// is per stream, so the tag choice does not affect semantics); an empty
/// stream borrows the first event tag seen anywhere. An instance with no
/// events at all is returned unchanged.
pub fn inject_heartbeats(streams: &[Vec<Message>], period: u64) -> Vec<Vec<Message>> {
    let period = period.max(1);
    let max_ts = streams
        .iter()
        .flatten()
        .map(|m| m.ts().0)
        .max();
    let Some(max_ts) = max_ts else {
        return streams.to_vec();
    };
    let fallback_tag: Option<Tag> = streams
        .iter()
        .flatten()
        .find(|m| m.is_event())
        .map(|m| m.itag().tag.clone());
    let terminal_ts = max_ts + 1;

    let mut out = Vec::with_capacity(streams.len());
    for (sid, stream) in streams.iter().enumerate() {
        let sid = sid as u32;
        let mut msgs: Vec<Message> = Vec::with_capacity(stream.len() + 4);
        let mut last: Option<(Tag, u64)> = None;
        for msg in stream {
            if let Some((tag, last_ts)) = &last {
                let mut t = last_ts + period;
                while t < msg.ts().0 {
                    msgs.push(heartbeat(tag.clone(), sid, t));
                    t += period;
                }
            }
            msgs.push(msg.clone());
            last = Some((msg.itag().tag.clone(), msg.ts().0));
        }
        let tag_for_terminal = last
            .as_ref()
            .map(|(t, _)| t.clone())
            .or_else(|| fallback_tag.clone());
        if let Some(tag) = tag_for_terminal {
            let last_ts = last.map(|(_, t)| t).unwrap_or(0);
            if last_ts < terminal_ts {
                msgs.push(heartbeat(tag, sid, terminal_ts));
            }
        }
        out.push(msgs);
    }
    assign_seqs(&mut out);
    out
}

/// Checks mailbox validity of a run: each worker's release log must be a
/// reordering of the events delivered to it (its own tags plus every
/// ancestor's, with ancestor events standing in as join requests) that
/// preserves the relative order of dependent tags.
pub fn verify_release_logs<S>(
    program: &DgsProgram<S>,
    plan: &SyncPlan,
    streams: &[Vec<Message>],
    logs: &BTreeMap<WorkerId, Vec<ReleaseRecord>>,
) -> Result<(), String> {
    let mut streams = streams.to_vec();
    assign_seqs(&mut streams);
    for w in &plan.workers {
        let log = logs
            .get(&w.id)
            .ok_or_else(|| format!("missing release log for {}", w.id))?;

        // Relevant set: own tags plus all ancestors' tags.
        let mut relevant: BTreeSet<ImplTag> = w.itags.clone();
        let mut cur = plan.parent_of(w.id);
        while let Some(p) = cur {
            relevant.extend(plan.node(p).itags.iter().cloned());
            cur = plan.parent_of(p);
        }
        let mut expected: Vec<(ImplTag, OKey)> = streams
            .iter()
            .flatten()
            .filter_map(|m| match m {
                Message::Event(e) if relevant.contains(&e.itag) => {
                    Some((e.itag.clone(), e.okey()))
                }
                _ => None,
            })
            .collect();
        expected.sort();
        let mut got: Vec<(ImplTag, OKey)> =
            log.iter().map(|r| (r.itag.clone(), r.okey)).collect();
        got.sort();
        if expected != got {
            return Err(format!(
                "{}: release log is not a permutation of its delivered relevant events \
                 ({} expected, {} released)",
                w.id,
                expected.len(),
                got.len()
            ));
        }

        // Dependent pairs must be released in O order.
        let mut last_seen: BTreeMap<&ImplTag, OKey> = BTreeMap::new();
        for rec in log {
            for (other, &okey) in &last_seen {
                if program.rel.depends(&rec.itag.tag, &other.tag) && okey > rec.okey {
                    return Err(format!(
                        "{}: released {} at {} after dependent {} at {}",
                        w.id, rec.itag, rec.okey, other, okey
                    ));
                }
            }
            let e = last_seen.entry(&rec.itag).or_insert(rec.okey);
            *e = (*e).max(rec.okey);
        }
    }
    Ok(())
}

/// Percentile over an unsorted sample set, by rank.
pub(crate) fn percentile_us(samples: &mut [Duration], p: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    samples.sort_unstable();
    let rank = ((samples.len() as f64 - 1.0) * p).round() as usize;
    Some(samples[rank].as_secs_f64() * 1e6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{event, Value};

    fn a() -> Tag {
        Tag::bare("a")
    }

    #[test]
    fn heartbeats_fill_gaps_and_terminate() {
        let streams = vec![vec![
            event(a(), 0, 10, Value::Unit),
            event(a(), 0, 30, Value::Unit),
        ]];
        let out = inject_heartbeats(&streams, 10);
        let tss: Vec<(u64, bool)> = out[0].iter().map(|m| (m.ts().0, m.is_event())).collect();
        assert_eq!(tss, vec![(10, true), (20, false), (30, true), (31, false)]);
    }

    #[test]
    fn long_period_adds_terminal_only() {
        let streams = vec![vec![
            event(a(), 0, 10, Value::Unit),
            event(a(), 0, 30, Value::Unit),
        ]];
        let out = inject_heartbeats(&streams, 1000);
        assert_eq!(out[0].len(), 3);
        assert_eq!(out[0][2].ts().0, 31);
    }

    #[test]
    fn empty_stream_gets_single_terminal_heartbeat() {
        let streams = vec![
            vec![event(a(), 0, 5, Value::Unit)],
            vec![],
        ];
        let out = inject_heartbeats(&streams, 3);
        assert_eq!(out[1].len(), 1);
        assert!(!out[1][0].is_event());
        assert_eq!(out[1][0].ts().0, 6);
        assert!(validate_input_instance(&out).is_empty());
    }

    #[test]
    fn no_events_no_heartbeats() {
        let streams: Vec<Vec<Message>> = vec![vec![], vec![]];
        assert_eq!(inject_heartbeats(&streams, 1), streams);
    }

    /// A root of pair type joining scalar-typed leaves: state types convert
    /// through the fork/join bindings during execution.
    #[test]
    fn heterogeneous_state_types_execute() {
        use crate::plan::{SyncPlan, WorkerId, WorkerNode};

        let program = crate::program::pair_split_program();
        let x = Tag::bare("x");
        let y = Tag::bare("y");
        let streams = inject_heartbeats(
            &[
                vec![
                    event(x.clone(), 0, 1, Value::Int(2)),
                    event(x.clone(), 0, 5, Value::Int(4)),
                ],
                vec![event(y.clone(), 1, 2, Value::Int(3))],
                vec![event(x.clone(), 2, 3, Value::Int(10))],
            ],
            2,
        );
        let plan = SyncPlan {
            workers: vec![
                WorkerNode {
                    id: WorkerId(0),
                    state_type: 0,
                    itags: [crate::model::ImplTag::new(x.clone(), 2)].into(),
                    fork: Some(0),
                    join: Some(0),
                    children: vec![WorkerId(1), WorkerId(2)],
                    location: String::new(),
                },
                WorkerNode {
                    id: WorkerId(1),
                    state_type: 1,
                    itags: [crate::model::ImplTag::new(x, 0)].into(),
                    fork: None,
                    join: None,
                    children: vec![],
                    location: String::new(),
                },
                WorkerNode {
                    id: WorkerId(2),
                    state_type: 2,
                    itags: [crate::model::ImplTag::new(y, 1)].into(),
                    fork: None,
                    join: None,
                    children: vec![],
                    location: String::new(),
                },
            ],
            roots: vec![WorkerId(0)],
        };
        let input = crate::model::sort_streams(&streams).unwrap();
        let mut expected = program.sequential_spec(&input).unwrap();
        expected.sort();
        for seed in 0..10 {
            let outcome =
                run_plan(&program, &plan, &streams, &RunOptions::simulated(seed)).unwrap();
            let mut got = outcome.outputs;
            got.sort();
            assert_eq!(got, expected, "seed {seed}");
        }
    }
}

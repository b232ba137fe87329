//! The per-worker protocol state machine, shared by the simulated and
//! concurrent modes. A worker consumes `WorkerMsg`s, runs its mailbox, and
//! emits effects (messages to other workers, outputs, checkpoints).
//!
//! Leaves hold their state permanently. Internal nodes hold state only
//! transiently: processing one of their own events means joining the
//! children's states, updating, and forking back; a join request from the
//! parent cascades the same collapse one level further down.

use std::collections::VecDeque;
use std::time::Instant;

use crate::apps::AppState;
use crate::model::{Event, ImplTag, OKey, StreamId, TagPredicate};
use crate::plan::WorkerId;
use crate::program::{DgsProgram, Output};

use super::mailbox::{Mailbox, Released};
use super::{
    CheckpointPredicate, CheckpointRecord, ReleaseKind, ReleaseRecord, RunContext, RuntimeError,
    WorkerStats,
};

/// Messages exchanged between the router and workers and between workers.
/// Delivery between any two endpoints is reliable and order-preserving.
pub enum WorkerMsg<S> {
    /// An event of one of the receiver's own tags.
    Event(Event, Option<Instant>),
    /// Stream progress: every message of `stream` below `frontier` has been
    /// ingested (exclusive bound).
    Progress { stream: StreamId, frontier: OKey },
    /// The parent's release frontier (exclusive).
    ParentFrontier(OKey),
    /// The parent processes an event of `itag` at `okey`; the receiver must
    /// surrender its state at exactly that point.
    JoinRequest { itag: ImplTag, okey: OKey },
    /// A child's state, answering a join request.
    JoinResponse { from: WorkerId, state: S },
    /// The re-forked state after a join, returning ownership to the child.
    ForkResponse { state: S },
    /// The sender will not send anything further (concurrent mode).
    Shutdown(ShutdownSource),
    /// Routed delivery batch (concurrent mode amortization).
    Batch(Vec<WorkerMsg<S>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShutdownSource {
    Router,
    Parent,
}

pub enum Effect<S> {
    Send { to: WorkerId, msg: WorkerMsg<S> },
}

enum Phase<S> {
    /// Leaf holding its state.
    Holding(S),
    /// Internal node whose state lives at its children.
    Delegated,
    /// Internal node collecting join responses to process its own event.
    JoiningSelf { trigger: Event, ingress: Option<Instant>, left: Option<S>, right: Option<S> },
    /// Internal node collecting join responses on behalf of its parent.
    JoiningForParent { left: Option<S>, right: Option<S> },
    /// Gave its state up the tree; waiting for the forked share back.
    AwaitingFork,
    /// Transient marker while a transition runs.
    Poisoned,
}

pub struct WorkerCore<'p, S> {
    pub id: WorkerId,
    program: &'p DgsProgram<S>,
    state_type: usize,
    parent: Option<WorkerId>,
    children: Vec<WorkerId>,
    fork: Option<usize>,
    join: Option<usize>,
    child_preds: Option<(TagPredicate, TagPredicate)>,
    is_root: bool,

    phase: Phase<S>,
    pub mailbox: Mailbox,
    ready: VecDeque<Released>,

    checkpoints_pred: Option<CheckpointPredicate>,
    capture_log: bool,

    last_frontier_sent: OKey,

    pub outputs: Vec<Output>,
    pub latencies: Vec<std::time::Duration>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub release_log: Vec<ReleaseRecord>,
    pub stats: WorkerStats,

    pub router_done: bool,
    pub parent_done: bool,
}

impl<'p, S: AppState> WorkerCore<'p, S> {
    pub fn new(
        program: &'p DgsProgram<S>,
        ctx: &RunContext,
        id: WorkerId,
        initial: Option<S>,
        checkpoints_pred: Option<CheckpointPredicate>,
        capture_log: bool,
    ) -> Self {
        let node = ctx.plan.node(id);
        let own_streams: std::collections::BTreeSet<StreamId> =
            node.itags.iter().map(|t| t.stream).collect();
        let parent = ctx.parents[id.0];
        let phase = match initial {
            Some(s) => Phase::Holding(s),
            None => Phase::Delegated,
        };
        WorkerCore {
            id,
            program,
            state_type: node.state_type,
            parent,
            children: node.children.clone(),
            fork: node.fork,
            join: node.join,
            child_preds: ctx.child_preds[id.0].clone(),
            is_root: parent.is_none(),
            phase,
            mailbox: Mailbox::new(own_streams, parent.is_some()),
            ready: VecDeque::new(),
            checkpoints_pred,
            capture_log,
            last_frontier_sent: OKey::MIN,
            outputs: Vec::new(),
            latencies: Vec::new(),
            checkpoints: Vec::new(),
            release_log: Vec::new(),
            stats: WorkerStats { worker: id.0, ..Default::default() },
            router_done: false,
            parent_done: false,
        }
    }

    fn blocked(&self) -> bool {
        !matches!(self.phase, Phase::Holding(_) | Phase::Delegated)
    }

    pub fn idle(&self) -> bool {
        !self.blocked() && self.ready.is_empty()
    }

    pub fn has_ready(&self) -> bool {
        !self.blocked() && !self.ready.is_empty()
    }

    pub fn quiescent(&self) -> bool {
        self.idle() && self.mailbox.is_drained()
    }

    pub fn describe_stall(&self) -> String {
        let phase = match &self.phase {
            Phase::Holding(_) => "holding",
            Phase::Delegated => "delegated",
            Phase::JoiningSelf { .. } => "joining children for own event",
            Phase::JoiningForParent { .. } => "joining children for parent",
            Phase::AwaitingFork => "awaiting forked state",
            Phase::Poisoned => "poisoned",
        };
        format!(
            "{}: phase `{phase}`, {} ready message(s), {}",
            self.id,
            self.ready.len(),
            self.mailbox.pending_summary()
        )
    }

    /// Handles one incoming message: mailbox messages may release work into
    /// the ready queue; protocol responses advance the join/fork protocol.
    pub fn handle(
        &mut self,
        msg: WorkerMsg<S>,
        effects: &mut Vec<Effect<S>>,
    ) -> Result<(), RuntimeError> {
        match msg {
            WorkerMsg::Event(ev, ingress) => {
                self.mailbox
                    .insert_event(ev, ingress)
                    .map_err(RuntimeError::Mailbox)?;
                self.collect_releases();
            }
            WorkerMsg::Progress { stream, frontier } => {
                self.mailbox.insert_progress(stream, frontier);
                self.collect_releases();
            }
            WorkerMsg::ParentFrontier(f) => {
                self.mailbox.insert_parent_frontier(f);
                self.collect_releases();
            }
            WorkerMsg::JoinRequest { itag, okey } => {
                self.mailbox.insert_join_request(itag, okey);
                self.collect_releases();
            }
            WorkerMsg::JoinResponse { from, state } => {
                self.on_join_response(from, state, effects)?;
            }
            WorkerMsg::ForkResponse { state } => {
                self.on_fork_response(state, effects)?;
            }
            WorkerMsg::Shutdown(source) => match source {
                ShutdownSource::Router => self.router_done = true,
                ShutdownSource::Parent => self.parent_done = true,
            },
            WorkerMsg::Batch(msgs) => {
                for m in msgs {
                    self.handle(m, effects)?;
                }
            }
        }
        Ok(())
    }

    fn collect_releases(&mut self) {
        let mut released = Vec::new();
        self.mailbox.release(&mut released);
        if self.capture_log {
            for r in &released {
                let (itag, kind) = match r {
                    Released::Event(e, _) => (e.itag.clone(), ReleaseKind::Event),
                    Released::JoinRequest { itag, .. } => {
                        (itag.clone(), ReleaseKind::JoinRequest)
                    }
                };
                self.release_log.push(ReleaseRecord { itag, okey: r.okey(), kind });
            }
        }
        self.ready.extend(released);
    }

    /// Processes one ready message if not mid-protocol. Returns whether
    /// anything was processed.
    pub fn step_ready(&mut self, effects: &mut Vec<Effect<S>>) -> Result<bool, RuntimeError> {
        if self.blocked() {
            return Ok(false);
        }
        let Some(item) = self.ready.pop_front() else {
            return Ok(false);
        };
        match item {
            Released::Event(ev, ingress) => self.process_event(ev, ingress, effects)?,
            Released::JoinRequest { itag, okey } => {
                self.process_join_request(itag, okey, effects)?
            }
        }
        Ok(true)
    }

    pub fn drain_ready(&mut self, effects: &mut Vec<Effect<S>>) -> Result<(), RuntimeError> {
        while self.step_ready(effects)? {}
        Ok(())
    }

    fn process_event(
        &mut self,
        ev: Event,
        ingress: Option<Instant>,
        effects: &mut Vec<Effect<S>>,
    ) -> Result<(), RuntimeError> {
        match std::mem::replace(&mut self.phase, Phase::Poisoned) {
            Phase::Holding(state) => {
                let next = self.apply_update(state, &ev, ingress);
                self.phase = Phase::Holding(next);
                Ok(())
            }
            Phase::Delegated => {
                let okey = ev.okey();
                for &c in &self.children {
                    effects.push(Effect::Send {
                        to: c,
                        msg: WorkerMsg::JoinRequest { itag: ev.itag.clone(), okey },
                    });
                }
                self.phase =
                    Phase::JoiningSelf { trigger: ev, ingress, left: None, right: None };
                Ok(())
            }
            other => {
                self.phase = other;
                Err(self.protocol_error("processed an event while mid-protocol"))
            }
        }
    }

    fn process_join_request(
        &mut self,
        itag: ImplTag,
        okey: OKey,
        effects: &mut Vec<Effect<S>>,
    ) -> Result<(), RuntimeError> {
        let parent = self
            .parent
            .ok_or_else(|| self.protocol_error("root received a join request"))?;
        match std::mem::replace(&mut self.phase, Phase::Poisoned) {
            Phase::Holding(state) => {
                effects.push(Effect::Send {
                    to: parent,
                    msg: WorkerMsg::JoinResponse { from: self.id, state },
                });
                self.phase = Phase::AwaitingFork;
                Ok(())
            }
            Phase::Delegated => {
                // Collapse the subtree: ask the children for their states
                // at the same position.
                for &c in &self.children {
                    effects.push(Effect::Send {
                        to: c,
                        msg: WorkerMsg::JoinRequest { itag: itag.clone(), okey },
                    });
                }
                self.phase = Phase::JoiningForParent { left: None, right: None };
                Ok(())
            }
            other => {
                self.phase = other;
                Err(self.protocol_error("join request while mid-protocol"))
            }
        }
    }

    fn on_join_response(
        &mut self,
        from: WorkerId,
        state: S,
        effects: &mut Vec<Effect<S>>,
    ) -> Result<(), RuntimeError> {
        let slot = if Some(&from) == self.children.first() {
            0
        } else if Some(&from) == self.children.get(1) {
            1
        } else {
            return Err(self.protocol_error("join response from a non-child"));
        };
        match std::mem::replace(&mut self.phase, Phase::Poisoned) {
            Phase::JoiningSelf { trigger, ingress, mut left, mut right } => {
                if slot == 0 { left = Some(state) } else { right = Some(state) };
                match (left, right) {
                    (Some(l), Some(r)) => {
                        let joined = self.apply_join(l, r);
                        let updated = self.apply_update(joined, &trigger, ingress);
                        if self.is_root {
                            if let Some(pred) = &self.checkpoints_pred {
                                if pred(&trigger) {
                                    self.checkpoints.push(CheckpointRecord {
                                        o_value: trigger.okey(),
                                        state: serde_json::to_value(&updated)
                                            .expect("state serializes"),
                                    });
                                }
                            }
                        }
                        self.fork_down(updated, effects);
                        self.phase = Phase::Delegated;
                    }
                    (left, right) => {
                        self.phase = Phase::JoiningSelf { trigger, ingress, left, right };
                    }
                }
                Ok(())
            }
            Phase::JoiningForParent { mut left, mut right } => {
                if slot == 0 { left = Some(state) } else { right = Some(state) };
                match (left, right) {
                    (Some(l), Some(r)) => {
                        let joined = self.apply_join(l, r);
                        let parent =
                            self.parent.expect("joining for parent implies a parent");
                        effects.push(Effect::Send {
                            to: parent,
                            msg: WorkerMsg::JoinResponse { from: self.id, state: joined },
                        });
                        self.phase = Phase::AwaitingFork;
                    }
                    (left, right) => {
                        self.phase = Phase::JoiningForParent { left, right };
                    }
                }
                Ok(())
            }
            other => {
                self.phase = other;
                Err(self.protocol_error("join response while not joining"))
            }
        }
    }

    fn on_fork_response(
        &mut self,
        state: S,
        effects: &mut Vec<Effect<S>>,
    ) -> Result<(), RuntimeError> {
        match std::mem::replace(&mut self.phase, Phase::Poisoned) {
            Phase::AwaitingFork => {
                if self.children.is_empty() {
                    self.phase = Phase::Holding(state);
                } else {
                    self.fork_down(state, effects);
                    self.phase = Phase::Delegated;
                }
                Ok(())
            }
            other => {
                self.phase = other;
                Err(self.protocol_error("fork response while not awaiting one"))
            }
        }
    }

    fn fork_down(&mut self, state: S, effects: &mut Vec<Effect<S>>) {
        let fork = self.fork.expect("internal node has a fork binding");
        let (lp, rp) = self.child_preds.as_ref().expect("internal node");
        let (sl, sr) = (self.program.forks[fork].func)(state, lp, rp);
        self.stats.forks += 1;
        effects.push(Effect::Send {
            to: self.children[0],
            msg: WorkerMsg::ForkResponse { state: sl },
        });
        effects.push(Effect::Send {
            to: self.children[1],
            msg: WorkerMsg::ForkResponse { state: sr },
        });
    }

    fn apply_join(&mut self, left: S, right: S) -> S {
        let join = self.join.expect("internal node has a join binding");
        self.stats.joins += 1;
        (self.program.joins[join].func)(left, right)
    }

    fn apply_update(&mut self, state: S, ev: &Event, ingress: Option<Instant>) -> S {
        let update = &self.program.state_types[self.state_type].update;
        let (next, vals) = update(state, ev);
        self.stats.events_processed += 1;
        if !vals.is_empty() {
            if let Some(t0) = ingress {
                let elapsed = t0.elapsed();
                self.latencies.extend(std::iter::repeat_n(elapsed, vals.len()));
            }
            self.outputs
                .extend(vals.into_iter().map(|value| Output { value, ts: ev.ts }));
        }
        next
    }

    /// Recomputes the release frontier and announces it to the children if
    /// it advanced. Everything this worker will still send them (join
    /// requests, frontiers) sits at or above the returned bound.
    pub fn emit_frontier(&mut self, effects: &mut Vec<Effect<S>>) {
        if self.children.is_empty() {
            return;
        }
        let mut floor = self.mailbox.frontier_floor();
        if let Some(front) = self.ready.front() {
            floor = floor.min(front.okey());
        }
        if let Phase::JoiningSelf { trigger, .. } = &self.phase {
            floor = floor.min(trigger.okey());
        }
        if floor > self.last_frontier_sent {
            self.last_frontier_sent = floor;
            for &c in &self.children {
                effects.push(Effect::Send { to: c, msg: WorkerMsg::ParentFrontier(floor) });
            }
        }
    }

    /// Concurrent-mode exit test: all senders to this worker have finished
    /// and nothing is left to do.
    pub fn may_shut_down(&self) -> bool {
        self.router_done && (self.is_root || self.parent_done) && self.quiescent()
    }

    pub fn captures_log(&self) -> bool {
        self.capture_log
    }

    pub fn children(&self) -> &[WorkerId] {
        &self.children
    }

    fn protocol_error(&self, msg: &str) -> RuntimeError {
        RuntimeError::Protocol(self.id.0, msg.to_string())
    }
}

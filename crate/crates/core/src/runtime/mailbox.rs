//! Selective reordering. A mailbox buffers the events a worker is
//! responsible for and releases them once it can prove no earlier relevant
//! message is outstanding:
//!
//!   * per-stream frontiers (exclusive bounds advanced by every event or
//!     heartbeat of that stream) must have passed the event, covering every
//!     stream the worker owns tags on;
//!   * the parent frontier must have passed it, so no ancestor can still
//!     process an event below it; and
//!   * no earlier join request is pending — a join request is released at
//!     its own position, after everything below it and before everything
//!     above it.
//!
//! Releases therefore come out in strictly increasing event order per
//! worker, which in particular preserves the relative order of every
//! dependent pair. Independent events of *different* workers still proceed
//! concurrently; that is where the parallelism lives.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::time::Instant;

use thiserror::Error;

use crate::model::{Event, ImplTag, OKey, StreamId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MailboxError {
    #[error("stale message on {itag} at {okey}: frontier already at {frontier}")]
    Stale { itag: ImplTag, okey: OKey, frontier: OKey },
    #[error("message for {0} is not relevant to this mailbox")]
    NotRelevant(ImplTag),
}

/// A message released to the worker process, in release order.
#[derive(Debug, Clone)]
pub enum Released {
    Event(Event, Option<Instant>),
    JoinRequest { itag: ImplTag, okey: OKey },
}

impl Released {
    pub fn okey(&self) -> OKey {
        match self {
            Released::Event(e, _) => e.okey(),
            Released::JoinRequest { okey, .. } => *okey,
        }
    }
}

struct BufferedEvent {
    event: Event,
    ingress: Option<Instant>,
}

/// Heap ordering for buffered events: minimum event order first.
struct HeapEntry(OKey, BufferedEvent);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.cmp(&other.0)
    }
}

pub struct Mailbox {
    /// Exclusive frontier per stream this worker owns tags on: every message
    /// of that stream below the frontier has been seen.
    frontiers: BTreeMap<StreamId, OKey>,
    /// Buffered events awaiting release, minimum first.
    buffered: BinaryHeap<Reverse<HeapEntry>>,
    /// Pending join requests in increasing O order (parents release their
    /// own events in O order, so arrival order is already sorted; kept
    /// sorted defensively).
    pending_jrs: VecDeque<(ImplTag, OKey)>,
    /// Exclusive release frontier of the parent; `OKey::MAX` at roots.
    parent_frontier: OKey,
}

impl Mailbox {
    /// `own_streams`: the streams of the worker's own implementation tags.
    /// `has_parent` decides whether releases gate on a parent frontier.
    pub fn new(own_streams: impl IntoIterator<Item = StreamId>, has_parent: bool) -> Self {
        Mailbox {
            frontiers: own_streams.into_iter().map(|s| (s, OKey::MIN)).collect(),
            buffered: BinaryHeap::new(),
            pending_jrs: VecDeque::new(),
            parent_frontier: if has_parent { OKey::MIN } else { OKey::MAX },
        }
    }

    /// Buffers an event of one of the worker's own tags and advances its
    /// stream frontier past it.
    pub fn insert_event(
        &mut self,
        event: Event,
        ingress: Option<Instant>,
    ) -> Result<(), MailboxError> {
        let okey = event.okey();
        let frontier = self
            .frontiers
            .get_mut(&event.itag.stream)
            .ok_or_else(|| MailboxError::NotRelevant(event.itag.clone()))?;
        if okey < *frontier {
            return Err(MailboxError::Stale {
                itag: event.itag.clone(),
                okey,
                frontier: *frontier,
            });
        }
        *frontier = okey.successor();
        self.buffered.push(Reverse(HeapEntry(okey, BufferedEvent { event, ingress })));
        Ok(())
    }

    /// Advances a stream frontier (heartbeats and co-owner progress).
    /// `frontier` is exclusive. Progress for streams this worker does not
    /// own tags on is ignored.
    pub fn insert_progress(&mut self, stream: StreamId, frontier: OKey) {
        if let Some(f) = self.frontiers.get_mut(&stream) {
            *f = (*f).max(frontier);
        }
    }

    /// Advances the parent's release frontier (exclusive).
    pub fn insert_parent_frontier(&mut self, frontier: OKey) {
        self.parent_frontier = self.parent_frontier.max(frontier);
    }

    /// Buffers a join request at its O position.
    pub fn insert_join_request(&mut self, itag: ImplTag, okey: OKey) {
        let pos = self.pending_jrs.partition_point(|(_, k)| *k < okey);
        self.pending_jrs.insert(pos, (itag, okey));
    }

    fn min_frontier(&self) -> OKey {
        self.frontiers.values().copied().min().unwrap_or(OKey::MAX)
    }

    /// Everything the worker might still receive or release is at or above
    /// this exclusive bound.
    pub fn frontier_floor(&self) -> OKey {
        let mut floor = self.min_frontier().min(self.parent_frontier);
        if let Some(Reverse(HeapEntry(k, _))) = self.buffered.peek() {
            floor = floor.min(*k);
        }
        if let Some((_, k)) = self.pending_jrs.front() {
            floor = floor.min(*k);
        }
        floor
    }

    pub fn is_drained(&self) -> bool {
        self.buffered.is_empty() && self.pending_jrs.is_empty()
    }

    pub fn pending_summary(&self) -> String {
        format!(
            "{} buffered event(s), {} pending join request(s)",
            self.buffered.len(),
            self.pending_jrs.len()
        )
    }

    /// Appends every currently releasable message, in release order.
    pub fn release(&mut self, out: &mut Vec<Released>) {
        loop {
            if let Some(released) = self.try_release_event() {
                out.push(released);
                continue;
            }
            if let Some(released) = self.try_release_join_request() {
                out.push(released);
                continue;
            }
            break;
        }
    }

    fn try_release_event(&mut self) -> Option<Released> {
        let Reverse(HeapEntry(okey, _)) = self.buffered.peek()?;
        let okey = *okey;
        if self.min_frontier() < okey || self.parent_frontier < okey {
            return None;
        }
        if let Some((_, jr)) = self.pending_jrs.front() {
            if *jr < okey {
                return None;
            }
        }
        let Reverse(HeapEntry(_, buffered)) = self.buffered.pop().expect("peeked");
        Some(Released::Event(buffered.event, buffered.ingress))
    }

    fn try_release_join_request(&mut self) -> Option<Released> {
        let (_, okey) = self.pending_jrs.front()?;
        let okey = *okey;
        if self.min_frontier() < okey || self.parent_frontier < okey {
            return None;
        }
        if let Some(Reverse(HeapEntry(k, _))) = self.buffered.peek() {
            if *k < okey {
                return None;
            }
        }
        let (itag, okey) = self.pending_jrs.pop_front().expect("peeked");
        Some(Released::JoinRequest { itag, okey })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ImplTag, Tag, Timestamp, Value};

    fn ev(tag: Tag, stream: u32, ts: u64) -> Event {
        Event {
            itag: ImplTag::new(tag, stream),
            ts: Timestamp(ts),
            seq: ts,
            payload: Value::Unit,
        }
    }

    fn okey(stream: u32, ts: u64) -> OKey {
        OKey { ts: Timestamp(ts), stream: StreamId(stream), seq: ts }
    }

    fn drain(mb: &mut Mailbox) -> Vec<Released> {
        let mut out = Vec::new();
        mb.release(&mut out);
        out
    }

    #[test]
    fn heartbeat_on_dependent_stream_releases_buffered_event() {
        // Owns i(1) on stream 0 and r(1) on stream 1; i(1)@5 must wait for
        // r(1)-stream progress past it.
        let mut mb = Mailbox::new([StreamId(0), StreamId(1)], false);
        mb.insert_event(ev(Tag::new("i", 1), 0, 5), None).unwrap();
        assert!(drain(&mut mb).is_empty());
        mb.insert_progress(StreamId(1), okey(1, 9).successor());
        let released = drain(&mut mb);
        assert_eq!(released.len(), 1);
        assert_eq!(released[0].okey().ts.0, 5);
    }

    #[test]
    fn event_with_nothing_pending_releases_immediately() {
        let mut mb = Mailbox::new([StreamId(0)], false);
        mb.insert_event(ev(Tag::new("i", 1), 0, 3), None).unwrap();
        let released = drain(&mut mb);
        assert_eq!(released.len(), 1);
    }

    #[test]
    fn buffered_events_release_lowest_first() {
        let mut mb = Mailbox::new([StreamId(0), StreamId(1)], false);
        mb.insert_event(ev(Tag::new("r", 1), 0, 7), None).unwrap();
        mb.insert_event(ev(Tag::new("i", 1), 1, 5), None).unwrap();
        mb.insert_progress(StreamId(0), okey(0, 9).successor());
        mb.insert_progress(StreamId(1), okey(1, 9).successor());
        let released = drain(&mut mb);
        let tss: Vec<u64> = released.iter().map(|r| r.okey().ts.0).collect();
        assert_eq!(tss, vec![5, 7]);
    }

    #[test]
    fn stale_event_is_rejected() {
        let mut mb = Mailbox::new([StreamId(0)], false);
        mb.insert_event(ev(Tag::new("i", 1), 0, 5), None).unwrap();
        let err = mb.insert_event(ev(Tag::new("i", 1), 0, 5), None).unwrap_err();
        assert!(matches!(err, MailboxError::Stale { .. }));
    }

    #[test]
    fn join_request_slots_between_events() {
        let mut mb = Mailbox::new([StreamId(0)], true);
        mb.insert_event(ev(Tag::new("a", 0), 0, 2), None).unwrap();
        mb.insert_event(ev(Tag::new("a", 0), 0, 8), None).unwrap();
        // Join request at ts 5 on the parent's stream 1.
        mb.insert_join_request(ImplTag::new(Tag::bare("b"), 1), okey(1, 5));
        // Nothing moves until the parent frontier reaches the request; then
        // the earlier event goes first, the request second, and the later
        // event stays blocked behind the parent frontier.
        assert!(drain(&mut mb).is_empty());
        mb.insert_parent_frontier(okey(1, 5));
        let released = drain(&mut mb);
        assert_eq!(released.len(), 2);
        assert_eq!(released[0].okey().ts.0, 2);
        assert!(matches!(released[1], Released::JoinRequest { .. }));
        // Once the parent's frontier passes the later event, it releases.
        mb.insert_parent_frontier(okey(1, 100));
        let released = drain(&mut mb);
        assert_eq!(released.len(), 1);
        assert_eq!(released[0].okey().ts.0, 8);
    }

    #[test]
    fn events_wait_for_parent_frontier() {
        let mut mb = Mailbox::new([StreamId(0)], true);
        mb.insert_event(ev(Tag::new("a", 0), 0, 4), None).unwrap();
        assert!(drain(&mut mb).is_empty());
        mb.insert_parent_frontier(okey(0, 4));
        assert_eq!(drain(&mut mb).len(), 1);
    }

    #[test]
    fn frontier_floor_tracks_all_pending_work()
    {
        let mut mb = Mailbox::new([StreamId(0)], false);
        assert_eq!(mb.frontier_floor(), OKey::MIN);
        mb.insert_event(ev(Tag::new("a", 0), 0, 4), None).unwrap();
        assert_eq!(mb.frontier_floor(), okey(0, 4));
        let _ = drain(&mut mb);
        assert_eq!(mb.frontier_floor(), okey(0, 4).successor());
    }
}

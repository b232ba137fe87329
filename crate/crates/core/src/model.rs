//! Core event model: tags, streams, the total event order, dependence
//! relations, tag predicates, and validation of input instances.
//!
//! Every run works over a finite tag alphabet. A tag is the part of an event
//! that matters for parallelization; the payload is opaque to the framework.
//! An implementation tag pairs a tag with the input stream it arrives on and
//! is the unit of ownership and routing in synchronization plans.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Symbolic event tag: a constructor name plus an optional integer key,
/// e.g. `i(1)`, `r(2)`, `b`, `a(0)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag {
    pub ctor: String,
    pub key: Option<u32>,
}

impl Tag {
    pub fn new(ctor: &str, key: u32) -> Self {
        Tag { ctor: ctor.to_string(), key: Some(key) }
    }

    pub fn bare(ctor: &str) -> Self {
        Tag { ctor: ctor.to_string(), key: None }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.key {
            Some(k) => write!(f, "{}({})", self.ctor, k),
            None => write!(f, "{}", self.ctor),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed tag `{0}`, expected `name` or `name(key)`")]
pub struct TagParseError(pub String);

impl FromStr for Tag {
    type Err = TagParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(TagParseError(s.to_string()));
        }
        match s.find('(') {
            None => {
                if s.chars().all(|c| c.is_alphanumeric() || c == '_') {
                    Ok(Tag { ctor: s.to_string(), key: None })
                } else {
                    Err(TagParseError(s.to_string()))
                }
            }
            Some(i) => {
                let (ctor, rest) = s.split_at(i);
                let inner = rest
                    .strip_prefix('(')
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| TagParseError(s.to_string()))?;
                let key = inner.parse::<u32>().map_err(|_| TagParseError(s.to_string()))?;
                if ctor.is_empty() {
                    return Err(TagParseError(s.to_string()));
                }
                Ok(Tag { ctor: ctor.to_string(), key: Some(key) })
            }
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Identifier of an input stream. The set of streams is finite and fixed for
/// a run; stream ids are dense indices into the run's stream list.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct StreamId(pub u32);

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Logical timestamp in abstract ticks. Strictly increasing within a stream.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Timestamp(pub u64);

/// A point in the total order `O` on messages: lexicographic
/// `(ts, stream, seq)` where `seq` is the message's position within its
/// stream. Timestamps are strictly increasing per stream, so `(ts, stream)`
/// is already unique on valid instances; `seq` keeps the order total and
/// deterministic even on malformed inputs.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct OKey {
    pub ts: Timestamp,
    pub stream: StreamId,
    pub seq: u64,
}

impl OKey {
    pub const MIN: OKey = OKey { ts: Timestamp(0), stream: StreamId(0), seq: 0 };
    pub const MAX: OKey =
        OKey { ts: Timestamp(u64::MAX), stream: StreamId(u32::MAX), seq: u64::MAX };

    /// Immediate successor in `O`. No real message can sit between a message
    /// at `self` and this value, since `(ts, stream)` pairs are unique.
    pub fn successor(self) -> OKey {
        OKey { seq: self.seq.saturating_add(1), ..self }
    }
}

impl fmt::Display for OKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}#{}", self.ts.0, self.stream, self.seq)
    }
}

/// Implementation tag: a tag together with the stream it arrives on.
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct ImplTag {
    pub tag: Tag,
    pub stream: StreamId,
}

impl ImplTag {
    pub fn new(tag: Tag, stream: u32) -> Self {
        ImplTag { tag, stream: StreamId(stream) }
    }
}

impl fmt::Display for ImplTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.tag, self.stream)
    }
}

/// Opaque application payload. The framework never inspects payloads; they
/// are interpreted only by application update functions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Unit,
    Int(i64),
    Pair(i64, i64),
    Text(String),
}

impl Value {
    pub fn as_int(&self) -> i64 {
        match self {
            Value::Int(v) => *v,
            Value::Unit => 0,
            Value::Pair(a, _) => *a,
            Value::Text(_) => 0,
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::{SerializeMap, SerializeSeq};
        match self {
            // Unit must not serialize to `null`: in trace files a null
            // payload marks a heartbeat.
            Value::Unit => serializer.serialize_map(Some(0))?.end(),
            Value::Int(v) => serializer.serialize_i64(*v),
            Value::Pair(a, b) => {
                let mut seq = serializer.serialize_seq(Some(2))?;
                seq.serialize_element(a)?;
                seq.serialize_element(b)?;
                seq.end()
            }
            Value::Text(s) => serializer.serialize_str(s),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(deserializer)?;
        Value::from_json(&v).map_err(serde::de::Error::custom)
    }
}

impl Value {
    pub fn from_json(v: &serde_json::Value) -> Result<Value, String> {
        match v {
            serde_json::Value::Object(m) if m.is_empty() => Ok(Value::Unit),
            serde_json::Value::Number(n) => n
                .as_i64()
                .map(Value::Int)
                .ok_or_else(|| format!("non-integer payload {n}")),
            serde_json::Value::Array(a) if a.len() == 2 => {
                let a0 = a[0].as_i64().ok_or("non-integer pair element")?;
                let a1 = a[1].as_i64().ok_or("non-integer pair element")?;
                Ok(Value::Pair(a0, a1))
            }
            serde_json::Value::String(s) => Ok(Value::Text(s.clone())),
            other => Err(format!("unsupported payload {other}")),
        }
    }
}

/// A payload-carrying input event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub itag: ImplTag,
    pub ts: Timestamp,
    /// Position of the message within its stream; assigned at ingestion and
    /// used only to break cross-stream timestamp ties deterministically.
    pub seq: u64,
    pub payload: Value,
}

impl Event {
    pub fn okey(&self) -> OKey {
        OKey { ts: self.ts, stream: self.itag.stream, seq: self.seq }
    }
}

/// A payload-free progress marker. Never reaches application update
/// functions; only advances mailbox timers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heartbeat {
    pub itag: ImplTag,
    pub ts: Timestamp,
    pub seq: u64,
}

impl Heartbeat {
    pub fn okey(&self) -> OKey {
        OKey { ts: self.ts, stream: self.itag.stream, seq: self.seq }
    }
}

/// One element of an input stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Event(Event),
    Heartbeat(Heartbeat),
}

impl Message {
    pub fn itag(&self) -> &ImplTag {
        match self {
            Message::Event(e) => &e.itag,
            Message::Heartbeat(h) => &h.itag,
        }
    }

    pub fn ts(&self) -> Timestamp {
        match self {
            Message::Event(e) => e.ts,
            Message::Heartbeat(h) => h.ts,
        }
    }

    pub fn okey(&self) -> OKey {
        match self {
            Message::Event(e) => e.okey(),
            Message::Heartbeat(h) => h.okey(),
        }
    }

    pub fn is_event(&self) -> bool {
        matches!(self, Message::Event(_))
    }
}

/// Convenience constructor for events; `seq` is fixed up by [`assign_seqs`].
pub fn event(tag: Tag, stream: u32, ts: u64, payload: Value) -> Message {
    Message::Event(Event {
        itag: ImplTag::new(tag, stream),
        ts: Timestamp(ts),
        seq: 0,
        payload,
    })
}

/// Convenience constructor for heartbeats; `seq` is fixed up by [`assign_seqs`].
pub fn heartbeat(tag: Tag, stream: u32, ts: u64) -> Message {
    Message::Heartbeat(Heartbeat { itag: ImplTag::new(tag, stream), ts: Timestamp(ts), seq: 0 })
}

/// Rewrites every message's `seq` to its position within its stream. Call
/// after constructing or transforming streams by hand.
pub fn assign_seqs(streams: &mut [Vec<Message>]) {
    for stream in streams.iter_mut() {
        for (i, msg) in stream.iter_mut().enumerate() {
            match msg {
                Message::Event(e) => e.seq = i as u64,
                Message::Heartbeat(h) => h.seq = i as u64,
            }
        }
    }
}

/// All distinct implementation tags of the events in the given streams.
/// Heartbeat tags are routing-irrelevant and excluded.
pub fn collect_event_itags(streams: &[Vec<Message>]) -> BTreeSet<ImplTag> {
    streams
        .iter()
        .flatten()
        .filter(|m| m.is_event())
        .map(|m| m.itag().clone())
        .collect()
}

/// A predicate over tags, represented as a finite set (membership =
/// satisfaction).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagPredicate(pub BTreeSet<Tag>);

impl TagPredicate {
    pub fn empty() -> Self {
        TagPredicate(BTreeSet::new())
    }

    pub fn of(tags: impl IntoIterator<Item = Tag>) -> Self {
        TagPredicate(tags.into_iter().collect())
    }

    pub fn contains(&self, tag: &Tag) -> bool {
        self.0.contains(tag)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_subset(&self, other: &TagPredicate) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn union(&self, other: &TagPredicate) -> TagPredicate {
        TagPredicate(self.0.union(&other.0).cloned().collect())
    }

    pub fn intersect(&self, other: &TagPredicate) -> TagPredicate {
        TagPredicate(self.0.intersection(&other.0).cloned().collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tag> {
        self.0.iter()
    }
}

impl fmt::Display for TagPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, "}}")
    }
}

/// The dependence relation on tags. Stored as directed pairs exactly as
/// given, so that [`validate_dependence`] can detect asymmetric input;
/// `depends` consults the stored pairs directly.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DependenceRelation {
    pairs: BTreeSet<(Tag, Tag)>,
}

impl DependenceRelation {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a relation from unordered pairs, inserting both orientations.
    pub fn symmetric(pairs: impl IntoIterator<Item = (Tag, Tag)>) -> Self {
        let mut rel = Self::new();
        for (a, b) in pairs {
            rel.insert_symmetric(a, b);
        }
        rel
    }

    pub fn insert_symmetric(&mut self, a: Tag, b: Tag) {
        self.pairs.insert((a.clone(), b.clone()));
        self.pairs.insert((b, a));
    }

    /// Inserts a single directed pair without its mirror. Only useful for
    /// constructing deliberately ill-formed relations in validation tests.
    pub fn insert_directed(&mut self, a: Tag, b: Tag) {
        self.pairs.insert((a, b));
    }

    pub fn depends(&self, a: &Tag, b: &Tag) -> bool {
        self.pairs.contains(&(a.clone(), b.clone()))
    }

    pub fn indep(&self, a: &Tag, b: &Tag) -> bool {
        !self.depends(a, b)
    }

    pub fn depends_itag(&self, a: &ImplTag, b: &ImplTag) -> bool {
        self.depends(&a.tag, &b.tag)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Tag, Tag)> {
        self.pairs.iter()
    }
}

/// Checks that `rel` is symmetric over `alphabet`. Returns the asymmetric
/// pairs: `(a, b)` is reported when `depends(a, b)` holds but `depends(b, a)`
/// does not.
pub fn validate_dependence(
    rel: &DependenceRelation,
    alphabet: &BTreeSet<Tag>,
) -> Vec<(Tag, Tag)> {
    let mut violations = Vec::new();
    for (a, b) in rel.iter() {
        if !alphabet.contains(a) || !alphabet.contains(b) {
            continue;
        }
        if !rel.depends(b, a) {
            violations.push((a.clone(), b.clone()));
        }
    }
    violations
}

/// True iff every tag satisfying `p1` is independent of every tag
/// satisfying `p2`. Vacuously true for empty predicates.
pub fn indep_preds(p1: &TagPredicate, p2: &TagPredicate, rel: &DependenceRelation) -> bool {
    p1.iter().all(|a| p2.iter().all(|b| rel.indep(a, b)))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("stream {0} is not sorted strictly by the event order")]
    UnsortedStream(StreamId),
}

/// Merges individually sorted streams into one event sequence in strictly
/// increasing `O` order, dropping heartbeats. Message `seq` numbers are
/// reassigned from stream positions so the result is deterministic.
pub fn sort_streams(streams: &[Vec<Message>]) -> Result<Vec<Event>, ModelError> {
    let mut streams = streams.to_vec();
    assign_seqs(&mut streams);
    for (i, stream) in streams.iter().enumerate() {
        for win in stream.windows(2) {
            // Strictly increasing timestamps; the per-stream sequence number
            // only breaks ties across streams and cannot legitimize
            // duplicate timestamps within one.
            if win[0].ts() >= win[1].ts() {
                return Err(ModelError::UnsortedStream(StreamId(i as u32)));
            }
        }
    }
    // k-way merge by head O-key.
    let mut heads: Vec<usize> = vec![0; streams.len()];
    let mut out = Vec::with_capacity(streams.iter().map(Vec::len).sum());
    loop {
        let mut best: Option<(OKey, usize)> = None;
        for (i, stream) in streams.iter().enumerate() {
            if let Some(msg) = stream.get(heads[i]) {
                let k = msg.okey();
                if best.is_none_or(|(bk, _)| k < bk) {
                    best = Some((k, i));
                }
            }
        }
        match best {
            None => break,
            Some((_, i)) => {
                if let Message::Event(e) = &streams[i][heads[i]] {
                    out.push(e.clone());
                }
                heads[i] += 1;
            }
        }
    }
    Ok(out)
}

/// A violation of the valid-input-instance conditions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputViolation {
    /// Consecutive messages in a stream are not strictly increasing.
    Monotonicity { stream: StreamId, position: usize },
    /// An event has no strictly later message on some other stream.
    Progress { stream: StreamId, position: usize, missing_in: StreamId },
}

impl fmt::Display for InputViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputViolation::Monotonicity { stream, position } => {
                write!(f, "{stream}: message #{position} does not increase strictly")
            }
            InputViolation::Progress { stream, position, missing_in } => write!(
                f,
                "{stream}: event #{position} has no later message in {missing_in}"
            ),
        }
    }
}

/// Checks the two valid-input-instance conditions: per-stream strict
/// monotonicity, and progress (each event is eventually surpassed on every
/// other stream). An empty violation list means the instance is valid.
///
/// A stream's last event does not require a later message on its own stream.
pub fn validate_input_instance(streams: &[Vec<Message>]) -> Vec<InputViolation> {
    let mut streams = streams.to_vec();
    assign_seqs(&mut streams);
    let mut violations = Vec::new();
    for (i, stream) in streams.iter().enumerate() {
        for (pos, win) in stream.windows(2).enumerate() {
            if win[0].ts() >= win[1].ts() {
                violations.push(InputViolation::Monotonicity {
                    stream: StreamId(i as u32),
                    position: pos + 1,
                });
            }
        }
    }
    // Progress: streams are checked against each other stream's maximum
    // O-key, which on sorted streams bounds every event they contain.
    let maxima: Vec<Option<OKey>> = streams
        .iter()
        .map(|s| s.iter().map(|m| m.okey()).max())
        .collect();
    for (i, stream) in streams.iter().enumerate() {
        for (pos, msg) in stream.iter().enumerate() {
            if !msg.is_event() {
                continue;
            }
            let k = msg.okey();
            for (j, max) in maxima.iter().enumerate() {
                if i == j {
                    continue;
                }
                if max.is_none_or(|m| m <= k) {
                    violations.push(InputViolation::Progress {
                        stream: StreamId(i as u32),
                        position: pos,
                        missing_in: StreamId(j as u32),
                    });
                }
            }
        }
    }
    violations
}

/// One line of a JSONL trace file. `payload: null` marks a heartbeat.
#[derive(Debug, Serialize, Deserialize)]
struct TraceLine {
    stream: u32,
    tag: Tag,
    ts: u64,
    payload: Option<Value>,
}

/// Serializes streams as JSONL, one message per line, stream by stream.
pub fn write_trace(streams: &[Vec<Message>]) -> String {
    let mut out = String::new();
    for stream in streams {
        for msg in stream {
            let line = match msg {
                Message::Event(e) => TraceLine {
                    stream: e.itag.stream.0,
                    tag: e.itag.tag.clone(),
                    ts: e.ts.0,
                    payload: Some(e.payload.clone()),
                },
                Message::Heartbeat(h) => TraceLine {
                    stream: h.itag.stream.0,
                    tag: h.itag.tag.clone(),
                    ts: h.ts.0,
                    payload: None,
                },
            };
            out.push_str(&serde_json::to_string(&line).expect("trace line serializes"));
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Parses a JSONL trace into streams. Stream ids index into the result;
/// gaps are filled with empty streams. Message `seq` numbers are assigned
/// from per-stream positions.
pub fn read_trace(text: &str) -> Result<Vec<Vec<Message>>, TraceError> {
    let mut by_stream: BTreeMap<u32, Vec<Message>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let line: TraceLine = serde_json::from_str(raw)
            .map_err(|source| TraceError::Parse { line: i + 1, source })?;
        let itag = ImplTag::new(line.tag, line.stream);
        let msg = match line.payload {
            Some(payload) => Message::Event(Event {
                itag,
                ts: Timestamp(line.ts),
                seq: 0,
                payload,
            }),
            None => Message::Heartbeat(Heartbeat { itag, ts: Timestamp(line.ts), seq: 0 }),
        };
        by_stream.entry(line.stream).or_default().push(msg);
    }
    let max_stream = by_stream.keys().next_back().copied().map_or(0, |m| m + 1);
    let mut streams = vec![Vec::new(); max_stream as usize];
    for (id, msgs) in by_stream {
        streams[id as usize] = msgs;
    }
    assign_seqs(&mut streams);
    Ok(streams)
}

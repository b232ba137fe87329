//! The program abstraction: a sequential update, a dependence relation over
//! tags, and fork/join state primitives, plus a pure wire-diagram
//! interpreter used as the reference semantics in tests.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{
    indep_preds, validate_dependence, DependenceRelation, Event, Tag, TagPredicate, Timestamp,
    Value,
};

/// Index into a program's list of state types. Index 0 is the distinguished
/// initial state type, whose predicate must be the full alphabet.
pub type StateTypeId = usize;

/// An output value stamped with the timestamp of the event that produced it.
/// Runs are compared as multisets of outputs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
pub struct Output {
    pub value: Value,
    pub ts: Timestamp,
}

/// Fused update: consumes a state and an event, returns the new state plus
/// any output values (the framework stamps them with the event timestamp).
pub type UpdateFn<S> = Arc<dyn Fn(S, &Event) -> (S, Vec<Value>) + Send + Sync>;

/// Splits one state into two, guided by the two independent predicates the
/// forked states will process.
pub type ForkFn<S> = Arc<dyn Fn(S, &TagPredicate, &TagPredicate) -> (S, S) + Send + Sync>;

/// Merges two states back into one.
pub type JoinFn<S> = Arc<dyn Fn(S, S) -> S + Send + Sync>;

pub struct StateType<S> {
    /// Which events states of this type may process.
    pub pred: TagPredicate,
    pub update: UpdateFn<S>,
}

pub struct ForkDef<S> {
    pub name: String,
    pub from: StateTypeId,
    pub to: (StateTypeId, StateTypeId),
    pub func: ForkFn<S>,
}

pub struct JoinDef<S> {
    pub name: String,
    pub from: (StateTypeId, StateTypeId),
    pub to: StateTypeId,
    pub func: JoinFn<S>,
}

/// A complete program: alphabet, dependence relation, state types with their
/// updates, an initial state of type 0, and fork/join primitives.
pub struct DgsProgram<S> {
    pub name: String,
    pub alphabet: BTreeSet<Tag>,
    pub rel: DependenceRelation,
    pub state_types: Vec<StateType<S>>,
    pub init: S,
    pub forks: Vec<ForkDef<S>>,
    pub joins: Vec<JoinDef<S>>,
}

impl<S> fmt::Debug for DgsProgram<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DgsProgram")
            .field("name", &self.name)
            .field("alphabet", &self.alphabet)
            .field("state_types", &self.state_types.len())
            .field("forks", &self.forks.len())
            .field("joins", &self.joins.len())
            .finish()
    }
}

/// A structural defect in a program definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProgramViolation {
    AsymmetricDependence(Tag, Tag),
    PredicateTagOutsideAlphabet { state_type: StateTypeId, tag: Tag },
    InitialPredicateNotFull,
    ForkTypeOutOfRange(String),
    JoinTypeOutOfRange(String),
    DuplicateBindingName(String),
    NoStateTypes,
}

impl fmt::Display for ProgramViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProgramViolation::AsymmetricDependence(a, b) => {
                write!(f, "dependence relation is asymmetric on ({a}, {b})")
            }
            ProgramViolation::PredicateTagOutsideAlphabet { state_type, tag } => {
                write!(f, "state type {state_type} predicate uses unknown tag {tag}")
            }
            ProgramViolation::InitialPredicateNotFull => {
                write!(f, "state type 0 must admit the full alphabet")
            }
            ProgramViolation::ForkTypeOutOfRange(name) => {
                write!(f, "fork `{name}` references an unknown state type")
            }
            ProgramViolation::JoinTypeOutOfRange(name) => {
                write!(f, "join `{name}` references an unknown state type")
            }
            ProgramViolation::DuplicateBindingName(name) => {
                write!(f, "fork/join binding name `{name}` is not unique")
            }
            ProgramViolation::NoStateTypes => write!(f, "program has no state types"),
        }
    }
}

impl<S> DgsProgram<S> {
    /// Structural validation: symmetric dependence relation, predicates
    /// closed over the alphabet, full initial predicate, well-typed and
    /// uniquely named fork/join bindings.
    pub fn validate(&self) -> Vec<ProgramViolation> {
        let mut out = Vec::new();
        if self.state_types.is_empty() {
            out.push(ProgramViolation::NoStateTypes);
            return out;
        }
        for (a, b) in validate_dependence(&self.rel, &self.alphabet) {
            out.push(ProgramViolation::AsymmetricDependence(a, b));
        }
        for (i, st) in self.state_types.iter().enumerate() {
            for tag in st.pred.iter() {
                if !self.alphabet.contains(tag) {
                    out.push(ProgramViolation::PredicateTagOutsideAlphabet {
                        state_type: i,
                        tag: tag.clone(),
                    });
                }
            }
        }
        if self.state_types[0].pred.0 != self.alphabet {
            out.push(ProgramViolation::InitialPredicateNotFull);
        }
        let n = self.state_types.len();
        for fk in &self.forks {
            if fk.from >= n || fk.to.0 >= n || fk.to.1 >= n {
                out.push(ProgramViolation::ForkTypeOutOfRange(fk.name.clone()));
            }
        }
        for jn in &self.joins {
            if jn.to >= n || jn.from.0 >= n || jn.from.1 >= n {
                out.push(ProgramViolation::JoinTypeOutOfRange(jn.name.clone()));
            }
        }
        let mut names = BTreeSet::new();
        for name in self
            .forks
            .iter()
            .map(|f| &f.name)
            .chain(self.joins.iter().map(|j| &j.name))
        {
            if !names.insert(name.clone()) {
                out.push(ProgramViolation::DuplicateBindingName(name.clone()));
            }
        }
        out
    }

    pub fn fork_by_name(&self, name: &str) -> Option<usize> {
        self.forks.iter().position(|f| f.name == name)
    }

    pub fn join_by_name(&self, name: &str) -> Option<usize> {
        self.joins.iter().position(|j| j.name == name)
    }

    /// Fork/join index pairs that convert between the same state types:
    /// fork `i -> (j, k)` paired with join `(j, k) -> i`.
    pub fn compatible_pairs(&self, state_type: StateTypeId) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (fi, fk) in self.forks.iter().enumerate() {
            if fk.from != state_type {
                continue;
            }
            for (ji, jn) in self.joins.iter().enumerate() {
                if jn.to == state_type && jn.from == fk.to {
                    pairs.push((fi, ji));
                }
            }
        }
        pairs
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProgramError {
    #[error("event tag {0} is not in the program alphabet")]
    UnknownTag(Tag),
    #[error("invalid wire diagram: {0}")]
    InvalidDiagram(String),
}

impl<S: Clone> DgsProgram<S> {
    /// The sequential semantics: a fold of the type-0 update over the input,
    /// collecting outputs in order. No forks or joins are invoked.
    pub fn sequential_spec(&self, input: &[Event]) -> Result<Vec<Output>, ProgramError> {
        self.sequential_fold(input).map(|(_, outs)| outs)
    }

    /// Like [`Self::sequential_spec`] but also returns the final state.
    pub fn sequential_fold(&self, input: &[Event]) -> Result<(S, Vec<Output>), ProgramError> {
        let mut state = self.init.clone();
        let mut outputs = Vec::new();
        let update = self.state_types[0].update.clone();
        for ev in input {
            if !self.alphabet.contains(&ev.itag.tag) {
                return Err(ProgramError::UnknownTag(ev.itag.tag.clone()));
            }
            let (next, vals) = update(state, ev);
            state = next;
            outputs.extend(vals.into_iter().map(|value| Output { value, ts: ev.ts }));
        }
        Ok((state, outputs))
    }
}

/// A term of the pictorial semantics: leaves fold events sequentially, `Seq`
/// composes, and `Par` forks the state, evaluates two independent legs, and
/// joins the results.
#[derive(Debug, Clone)]
pub enum WireDiagram {
    Leaf(Vec<Event>),
    Seq(Box<WireDiagram>, Box<WireDiagram>),
    Par {
        fork: usize,
        join: usize,
        pred1: TagPredicate,
        pred2: TagPredicate,
        left: Box<WireDiagram>,
        right: Box<WireDiagram>,
    },
}

impl WireDiagram {
    pub fn events(&self) -> Vec<Event> {
        match self {
            WireDiagram::Leaf(evs) => evs.clone(),
            WireDiagram::Seq(a, b) => {
                let mut out = a.events();
                out.extend(b.events());
                out
            }
            WireDiagram::Par { left, right, .. } => {
                let mut out = left.events();
                out.extend(right.events());
                out
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            WireDiagram::Leaf(_) => 0,
            WireDiagram::Seq(a, b) => a.depth().max(b.depth()),
            WireDiagram::Par { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Evaluates a wire diagram against the program. Every structural invariant
/// is checked as the diagram is walked: leaf events must satisfy the wire
/// predicate in force, `Par` predicates must be independent and imply both
/// the enclosing wire predicate and the forked state types' predicates, and
/// fork/join references must pair on state types.
///
/// `Par` legs may emit outputs in any interleaving; the one produced here is
/// chosen deterministically from `interleave_seed`.
pub fn eval_wire_diagram<S: Clone>(
    program: &DgsProgram<S>,
    diagram: &WireDiagram,
    interleave_seed: u64,
) -> Result<Vec<Output>, ProgramError> {
    let mut rng = ChaCha8Rng::seed_from_u64(interleave_seed);
    let wire = Wire {
        state_type: 0,
        pred: &program.state_types[0].pred,
    };
    let (_, outputs) = eval(program, diagram, wire, program.init.clone(), &mut rng)?;
    Ok(outputs)
}

struct Wire<'a> {
    state_type: StateTypeId,
    pred: &'a TagPredicate,
}

fn eval<S: Clone>(
    program: &DgsProgram<S>,
    diagram: &WireDiagram,
    wire: Wire<'_>,
    state: S,
    rng: &mut ChaCha8Rng,
) -> Result<(S, Vec<Output>), ProgramError> {
    match diagram {
        WireDiagram::Leaf(events) => {
            let update = &program.state_types[wire.state_type].update;
            let mut state = state;
            let mut outputs = Vec::new();
            for ev in events {
                if !program.alphabet.contains(&ev.itag.tag) {
                    return Err(ProgramError::UnknownTag(ev.itag.tag.clone()));
                }
                if !wire.pred.contains(&ev.itag.tag) {
                    return Err(ProgramError::InvalidDiagram(format!(
                        "event {} not admitted by wire predicate {}",
                        ev.itag, wire.pred
                    )));
                }
                let (next, vals) = update(state, ev);
                state = next;
                outputs.extend(vals.into_iter().map(|value| Output { value, ts: ev.ts }));
            }
            Ok((state, outputs))
        }
        WireDiagram::Seq(a, b) => {
            let (s1, mut v1) = eval(
                program,
                a,
                Wire { state_type: wire.state_type, pred: wire.pred },
                state,
                rng,
            )?;
            let (s2, v2) = eval(program, b, wire, s1, rng)?;
            v1.extend(v2);
            Ok((s2, v1))
        }
        WireDiagram::Par { fork, join, pred1, pred2, left, right } => {
            let fk = program
                .forks
                .get(*fork)
                .ok_or_else(|| ProgramError::InvalidDiagram(format!("no fork #{fork}")))?;
            let jn = program
                .joins
                .get(*join)
                .ok_or_else(|| ProgramError::InvalidDiagram(format!("no join #{join}")))?;
            if fk.from != wire.state_type || jn.to != wire.state_type || jn.from != fk.to {
                return Err(ProgramError::InvalidDiagram(format!(
                    "fork `{}` and join `{}` do not pair on state type {}",
                    fk.name, jn.name, wire.state_type
                )));
            }
            if !indep_preds(pred1, pred2, &program.rel) {
                return Err(ProgramError::InvalidDiagram(format!(
                    "fork predicates {pred1} and {pred2} are not independent"
                )));
            }
            if !pred1.is_subset(wire.pred) || !pred2.is_subset(wire.pred) {
                return Err(ProgramError::InvalidDiagram(
                    "fork predicates must imply the enclosing wire predicate".into(),
                ));
            }
            let (t1, t2) = fk.to;
            if !pred1.is_subset(&program.state_types[t1].pred)
                || !pred2.is_subset(&program.state_types[t2].pred)
            {
                return Err(ProgramError::InvalidDiagram(
                    "fork predicates must imply the forked state types' predicates".into(),
                ));
            }
            let (s1, s2) = (fk.func)(state, pred1, pred2);
            let (s1, v1) = eval(program, left, Wire { state_type: t1, pred: pred1 }, s1, rng)?;
            let (s2, v2) = eval(program, right, Wire { state_type: t2, pred: pred2 }, s2, rng)?;
            let joined = (jn.func)(s1, s2);
            Ok((joined, interleave(v1, v2, rng)))
        }
    }
}

fn interleave(left: Vec<Output>, right: Vec<Output>, rng: &mut ChaCha8Rng) -> Vec<Output> {
    let mut out = Vec::with_capacity(left.len() + right.len());
    let mut l = left.into_iter().peekable();
    let mut r = right.into_iter().peekable();
    loop {
        match (l.peek().is_some(), r.peek().is_some()) {
            (false, false) => break,
            (true, false) => out.push(l.next().unwrap()),
            (false, true) => out.push(r.next().unwrap()),
            (true, true) => {
                if rng.gen_bool(0.5) {
                    out.push(l.next().unwrap());
                } else {
                    out.push(r.next().unwrap());
                }
            }
        }
    }
    out
}

/// Builds a random structurally valid wire diagram whose leaves partition
/// `input` in order. Events admitted by neither predicate of a candidate
/// split are hoisted into surrounding sequential segments; if no fork of the
/// program matches a requested split the generator falls back to a leaf.
pub fn random_wire_diagram<S>(
    program: &DgsProgram<S>,
    input: &[Event],
    depth: usize,
    seed: u64,
) -> WireDiagram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_diagram(
        program,
        input,
        0,
        &program.state_types[0].pred.clone(),
        depth,
        &mut rng,
    )
}

fn build_diagram<S>(
    program: &DgsProgram<S>,
    input: &[Event],
    state_type: StateTypeId,
    pred: &TagPredicate,
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> WireDiagram {
    if depth == 0 || input.len() < 2 {
        return WireDiagram::Leaf(input.to_vec());
    }
    let pairs = program.compatible_pairs(state_type);
    let Some(&(fork, join)) = pairs.as_slice().choose(rng) else {
        return WireDiagram::Leaf(input.to_vec());
    };
    let (t1, t2) = program.forks[fork].to;
    let Some((pred1, pred2)) = color_predicates(
        program,
        pred,
        &program.state_types[t1].pred,
        &program.state_types[t2].pred,
        rng,
    ) else {
        return WireDiagram::Leaf(input.to_vec());
    };
    let admitted = pred1.union(&pred2);

    // Split the input into maximal runs of admitted events (which become Par
    // nodes over this fork) and excluded events (which stay sequential).
    let mut segments: Vec<WireDiagram> = Vec::new();
    let mut run: Vec<Event> = Vec::new();
    let mut run_admitted = None;
    for ev in input {
        let adm = admitted.contains(&ev.itag.tag);
        if run_admitted != Some(adm) && !run.is_empty() {
            segments.push(finish_run(
                program,
                std::mem::take(&mut run),
                run_admitted.unwrap(),
                fork,
                join,
                &pred1,
                &pred2,
                depth,
                rng,
            ));
        }
        run_admitted = Some(adm);
        run.push(ev.clone());
    }
    if let Some(adm) = run_admitted {
        segments.push(finish_run(program, run, adm, fork, join, &pred1, &pred2, depth, rng));
    }
    segments
        .into_iter()
        .reduce(|a, b| WireDiagram::Seq(Box::new(a), Box::new(b)))
        .unwrap_or(WireDiagram::Leaf(Vec::new()))
}

#[allow(clippy::too_many_arguments)]
fn finish_run<S>(
    program: &DgsProgram<S>,
    run: Vec<Event>,
    admitted: bool,
    fork: usize,
    join: usize,
    pred1: &TagPredicate,
    pred2: &TagPredicate,
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> WireDiagram {
    if !admitted {
        return WireDiagram::Leaf(run);
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    for ev in run {
        let in1 = pred1.contains(&ev.itag.tag);
        let in2 = pred2.contains(&ev.itag.tag);
        match (in1, in2) {
            (true, true) => {
                if rng.gen_bool(0.5) {
                    left.push(ev);
                } else {
                    right.push(ev);
                }
            }
            (true, false) => left.push(ev),
            (false, true) => right.push(ev),
            (false, false) => unreachable!("run events are admitted"),
        }
    }
    let (t1, t2) = program.forks[fork].to;
    let left = build_diagram(program, &left, t1, pred1, depth - 1, rng);
    let right = build_diagram(program, &right, t2, pred2, depth - 1, rng);
    WireDiagram::Par {
        fork,
        join,
        pred1: pred1.clone(),
        pred2: pred2.clone(),
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Randomly two-colors tags of `pred` into independent predicates. A tag may
/// land on both sides only if it is independent of itself. Returns `None`
/// when the coloring ends up trivial (both sides empty).
fn color_predicates<S>(
    program: &DgsProgram<S>,
    pred: &TagPredicate,
    limit1: &TagPredicate,
    limit2: &TagPredicate,
    rng: &mut ChaCha8Rng,
) -> Option<(TagPredicate, TagPredicate)> {
    let mut tags: Vec<Tag> = pred.iter().cloned().collect();
    tags.shuffle(rng);
    let mut side1: BTreeSet<Tag> = BTreeSet::new();
    let mut side2: BTreeSet<Tag> = BTreeSet::new();
    let rel = &program.rel;
    for tag in tags {
        let ok1 = limit1.contains(&tag) && side2.iter().all(|t| rel.indep(&tag, t));
        let ok2 = limit2.contains(&tag) && side1.iter().all(|t| rel.indep(&tag, t));
        let both = ok1 && ok2 && rel.indep(&tag, &tag);
        if both && rng.gen_bool(0.3) {
            side1.insert(tag.clone());
            side2.insert(tag);
        } else if ok1 && ok2 {
            if rng.gen_bool(0.5) {
                side1.insert(tag);
            } else {
                side2.insert(tag);
            }
        } else if ok1 {
            side1.insert(tag);
        } else if ok2 {
            side2.insert(tag);
        }
    }
    if side1.is_empty() && side2.is_empty() {
        return None;
    }
    Some((TagPredicate(side1), TagPredicate(side2)))
}

/// Test program with three state types: a pair that forks into its two
/// scalar components. Tag `x` events add to the first component, `y` events
/// to the second; both report the running component total.
#[cfg(test)]
pub(crate) fn pair_split_program() -> DgsProgram<(i64, i64)> {
    use std::collections::BTreeSet;
    let x = Tag::bare("x");
    let y = Tag::bare("y");
    let alphabet: BTreeSet<Tag> = [x.clone(), y.clone()].into();
    let pair_update: UpdateFn<(i64, i64)> = Arc::new(|s: (i64, i64), e: &Event| {
        let v = e.payload.as_int();
        match e.itag.tag.ctor.as_str() {
            "x" => ((s.0 + v, s.1), vec![Value::Int(s.0 + v)]),
            _ => ((s.0, s.1 + v), vec![Value::Int(s.1 + v)]),
        }
    });
    // Scalar types track one component each; the event sets which pair slot
    // the scalar stands for, so the update shape is shared.
    let scalar_update: UpdateFn<(i64, i64)> = Arc::new(|s: (i64, i64), e: &Event| {
        let v = e.payload.as_int();
        ((s.0 + v, 0), vec![Value::Int(s.0 + v)])
    });
    DgsProgram {
        name: "pair-split".into(),
        alphabet: alphabet.clone(),
        rel: DependenceRelation::new(),
        state_types: vec![
            StateType { pred: TagPredicate(alphabet), update: pair_update },
            StateType { pred: TagPredicate::of([x]), update: scalar_update.clone() },
            StateType { pred: TagPredicate::of([y]), update: scalar_update },
        ],
        init: (0, 0),
        forks: vec![ForkDef {
            name: "split_pair".into(),
            from: 0,
            to: (1, 2),
            func: Arc::new(|s: (i64, i64), _: &TagPredicate, _: &TagPredicate| {
                ((s.0, 0), (s.1, 0))
            }),
        }],
        joins: vec![JoinDef {
            name: "rebuild_pair".into(),
            from: (1, 2),
            to: 0,
            func: Arc::new(|l: (i64, i64), r: (i64, i64)| (l.0, r.0)),
        }],
    }
}

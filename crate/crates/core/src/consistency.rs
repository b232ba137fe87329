//! Randomized checking of the three consistency conditions that make a
//! program safe to parallelize: joins commute with updates (C1), a fork
//! followed by its join is the identity (C2), and independent events commute
//! (C3). States are compared structurally on their canonical form.
//!
//! The case generators sample *reachable* configurations: the sibling state
//! in a C1 case is produced by forking a random state under an independent
//! predicate pair containing the event's tag and evolving it only with
//! events the sibling leg may process, mirroring how runs actually reach
//! join sites. C2 predicate pairs assign whole dependence components to a
//! side, so they are independent and jointly cover any state's support.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::apps::{AppHarness, AppState};
use crate::model::{Event, ImplTag, Tag, TagPredicate, Timestamp, Value};
use crate::program::{DgsProgram, Output, StateTypeId};

const REJECTION_LIMIT: u32 = 1_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConsistencyError {
    #[error("{0}")]
    PreconditionUnsatisfiable(String),
    #[error("fork `{0}` and join `{1}` do not convert between the same state types")]
    IncompatiblePair(String, String),
    #[error("generator exhausted after {REJECTION_LIMIT} rejections: {0}")]
    GeneratorExhausted(String),
}

/// A reproducible failure witness with both sides' values.
#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub condition: &'static str,
    pub binding: String,
    pub detail: String,
    pub witness: serde_json::Value,
}

#[derive(Debug)]
pub enum CheckOutcome {
    Pass,
    Fail(Counterexample),
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, CheckOutcome::Pass)
    }
}

fn stamp(vals: Vec<Value>, ts: Timestamp) -> Vec<Output> {
    vals.into_iter().map(|value| Output { value, ts }).collect()
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("witness serializes")
}

fn event_json(e: &Event) -> serde_json::Value {
    serde_json::json!({
        "tag": e.itag.tag.to_string(),
        "stream": e.itag.stream.0,
        "ts": e.ts.0,
        "payload": e.payload,
    })
}

/// C1: processing an event on one side of a join commutes with joining, and
/// the outputs on both sides agree.
pub fn check_c1<S: AppState>(
    program: &DgsProgram<S>,
    join: usize,
    event: &Event,
    s1: &S,
    s2: &S,
) -> Result<CheckOutcome, ConsistencyError> {
    let jn = &program.joins[join];
    let (left_type, _) = jn.from;
    let result_type = jn.to;
    let tag = &event.itag.tag;
    if !program.state_types[result_type].pred.contains(tag)
        || !program.state_types[left_type].pred.contains(tag)
    {
        return Err(ConsistencyError::PreconditionUnsatisfiable(format!(
            "tag {tag} fails the predicates of join `{}`",
            jn.name
        )));
    }
    let update_left = &program.state_types[left_type].update;
    let update_result = &program.state_types[result_type].update;

    let (s1_updated, out_left) = update_left(s1.clone(), event);
    let lhs = (jn.func)(s1_updated, s2.clone());
    let joined = (jn.func)(s1.clone(), s2.clone());
    let (rhs, out_right) = update_result(joined, event);

    let out_left = stamp(out_left, event.ts);
    let out_right = stamp(out_right, event.ts);
    if lhs == rhs && out_left == out_right {
        return Ok(CheckOutcome::Pass);
    }
    Ok(CheckOutcome::Fail(Counterexample {
        condition: "C1",
        binding: jn.name.clone(),
        detail: "join(update(s1,e),s2) != update(join(s1,s2),e) or outputs differ".into(),
        witness: serde_json::json!({
            "event": event_json(event),
            "s1": json(s1),
            "s2": json(s2),
            "update_then_join": json(&lhs),
            "join_then_update": json(&rhs),
            "outputs_lhs": json(&out_left),
            "outputs_rhs": json(&out_right),
        }),
    }))
}

/// C2: a fork followed by its paired join reconstructs the state.
pub fn check_c2<S: AppState>(
    program: &DgsProgram<S>,
    fork: usize,
    join: usize,
    state: &S,
    pred1: &TagPredicate,
    pred2: &TagPredicate,
) -> Result<CheckOutcome, ConsistencyError> {
    let fk = &program.forks[fork];
    let jn = &program.joins[join];
    if fk.from != jn.to || fk.to != jn.from {
        return Err(ConsistencyError::IncompatiblePair(fk.name.clone(), jn.name.clone()));
    }
    let (a, b) = (fk.func)(state.clone(), pred1, pred2);
    let rejoined = (jn.func)(a, b);
    if rejoined == *state {
        return Ok(CheckOutcome::Pass);
    }
    Ok(CheckOutcome::Fail(Counterexample {
        condition: "C2",
        binding: format!("{}/{}", fk.name, jn.name),
        detail: "join(fork(s, pred1, pred2)) != s".into(),
        witness: serde_json::json!({
            "state": json(state),
            "pred1": json(pred1),
            "pred2": json(pred2),
            "rejoined": json(&rejoined),
        }),
    }))
}

/// C3: independent events commute, both in state and in outputs.
pub fn check_c3<S: AppState>(
    program: &DgsProgram<S>,
    state_type: StateTypeId,
    state: &S,
    e1: &Event,
    e2: &Event,
) -> Result<CheckOutcome, ConsistencyError> {
    let pred = &program.state_types[state_type].pred;
    if !pred.contains(&e1.itag.tag) || !pred.contains(&e2.itag.tag) {
        return Err(ConsistencyError::PreconditionUnsatisfiable(format!(
            "events fail the predicate of state type {state_type}"
        )));
    }
    if program.rel.depends(&e1.itag.tag, &e2.itag.tag) {
        return Err(ConsistencyError::PreconditionUnsatisfiable(format!(
            "events {} and {} are dependent",
            e1.itag.tag, e2.itag.tag
        )));
    }
    let update = &program.state_types[state_type].update;

    let (sa, o1) = update(state.clone(), e1);
    let (sab, o2) = update(sa, e2);
    let (sb, o3) = update(state.clone(), e2);
    let (sba, o4) = update(sb, e1);

    let mut forward: Vec<Output> = stamp(o1, e1.ts);
    forward.extend(stamp(o2, e2.ts));
    let mut backward: Vec<Output> = stamp(o3, e2.ts);
    backward.extend(stamp(o4, e1.ts));
    let mut fw = forward.clone();
    let mut bw = backward.clone();
    fw.sort();
    bw.sort();

    if sab == sba && fw == bw {
        return Ok(CheckOutcome::Pass);
    }
    Ok(CheckOutcome::Fail(Counterexample {
        condition: "C3",
        binding: format!("state type {state_type}"),
        detail: "independent events do not commute".into(),
        witness: serde_json::json!({
            "state": json(state),
            "e1": event_json(e1),
            "e2": event_json(e2),
            "state_e1_e2": json(&sab),
            "state_e2_e1": json(&sba),
            "outputs_e1_e2": json(&forward),
            "outputs_e2_e1": json(&backward),
        }),
    }))
}

#[derive(Debug, Default, Serialize)]
pub struct ConditionReport {
    pub cases: u64,
    pub failures: Vec<Counterexample>,
}

#[derive(Debug, Serialize)]
pub struct ConsistencyReport {
    pub program: String,
    pub c1: ConditionReport,
    pub c2: ConditionReport,
    pub c3: ConditionReport,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.failure_count() == 0
    }

    pub fn failure_count(&self) -> usize {
        self.c1.failures.len() + self.c2.failures.len() + self.c3.failures.len()
    }
}

/// Runs `cases` randomized checks per condition per applicable binding
/// combination, using the harness's generators but the given program (so the
/// same generators can exercise a mutated variant).
pub fn run_consistency_suite<S: AppState>(
    harness: &AppHarness<S>,
    program: &DgsProgram<S>,
    cases: u64,
    seed: u64,
) -> Result<ConsistencyReport, ConsistencyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConsistencyReport {
        program: program.name.clone(),
        c1: ConditionReport::default(),
        c2: ConditionReport::default(),
        c3: ConditionReport::default(),
    };

    // C1 per join.
    for join in 0..program.joins.len() {
        let jn = &program.joins[join];
        let candidate_tags: Vec<Tag> = program.state_types[jn.to]
            .pred
            .intersect(&program.state_types[jn.from.0].pred)
            .iter()
            .cloned()
            .collect();
        if candidate_tags.is_empty() {
            return Err(ConsistencyError::PreconditionUnsatisfiable(format!(
                "no tag satisfies the predicates of join `{}`",
                jn.name
            )));
        }
        for _ in 0..cases {
            let tag = candidate_tags.choose(&mut rng).expect("non-empty").clone();
            let event = random_event(harness, &tag, &mut rng);
            let (s1, s2) = sibling_states(harness, program, join, &tag, &mut rng);
            report.c1.cases += 1;
            if let CheckOutcome::Fail(cx) = check_c1(program, join, &event, &s1, &s2)? {
                report.c1.failures.push(cx);
            }
        }
    }

    // C2 per compatible fork/join pair.
    for (fork, join) in all_pairs(program) {
        for _ in 0..cases {
            let state = (harness.gen_state)(program.forks[fork].from, &mut rng);
            let (p1, p2) = component_pair(program, fork, &mut rng);
            report.c2.cases += 1;
            if let CheckOutcome::Fail(cx) = check_c2(program, fork, join, &state, &p1, &p2)? {
                report.c2.failures.push(cx);
            }
        }
    }

    // C3 per state type.
    for state_type in 0..program.state_types.len() {
        let tags: Vec<Tag> =
            program.state_types[state_type].pred.iter().cloned().collect();
        let mut indep_pairs: Vec<(Tag, Tag)> = Vec::new();
        for a in &tags {
            for b in &tags {
                if program.rel.indep(a, b) {
                    indep_pairs.push((a.clone(), b.clone()));
                }
            }
        }
        if indep_pairs.is_empty() {
            if tags.is_empty() {
                continue;
            }
            return Err(ConsistencyError::GeneratorExhausted(format!(
                "state type {state_type} admits no independent event pairs"
            )));
        }
        for _ in 0..cases {
            let (t1, t2) = indep_pairs.choose(&mut rng).expect("non-empty").clone();
            let e1 = random_event(harness, &t1, &mut rng);
            let e2 = random_event(harness, &t2, &mut rng);
            let state = (harness.gen_state)(state_type, &mut rng);
            report.c3.cases += 1;
            if let CheckOutcome::Fail(cx) = check_c3(program, state_type, &state, &e1, &e2)? {
                report.c3.failures.push(cx);
            }
        }
    }
    Ok(report)
}

fn all_pairs<S>(program: &DgsProgram<S>) -> Vec<(usize, usize)> {
    (0..program.state_types.len())
        .flat_map(|t| program.compatible_pairs(t))
        .collect()
}

fn random_event<S: AppState>(
    harness: &AppHarness<S>,
    tag: &Tag,
    rng: &mut ChaCha8Rng,
) -> Event {
    let ts = rng.gen_range(1..1_000_000u64);
    Event {
        itag: ImplTag::new(tag.clone(), 0),
        ts: Timestamp(ts),
        seq: 0,
        payload: (harness.gen_payload)(tag, rng),
    }
}

/// Builds a reachable (s1, s2) pair for a C1 check on `join` with an event
/// of `tag`: fork a random base state under an independent predicate pair
/// whose first component contains `tag`, then evolve each side with events
/// its own predicate admits.
fn sibling_states<S: AppState>(
    harness: &AppHarness<S>,
    program: &DgsProgram<S>,
    join: usize,
    tag: &Tag,
    rng: &mut ChaCha8Rng,
) -> (S, S) {
    let jn = &program.joins[join];
    let fork = program
        .forks
        .iter()
        .position(|f| f.from == jn.to && f.to == jn.from);
    let Some(fork) = fork else {
        // No matching fork: fall back to unconstrained random states.
        return ((harness.gen_state)(jn.from.0, rng), (harness.gen_state)(jn.from.1, rng));
    };
    let (t1, t2) = program.forks[fork].to;
    let (p1, p2) = independent_pair_with(
        program,
        tag,
        &program.state_types[t1].pred,
        &program.state_types[t2].pred,
        rng,
    );
    let base = (harness.gen_state)(jn.to, rng);
    let (s1, s2) = (program.forks[fork].func)(base, &p1, &p2);
    let s1 = evolve(harness, program, t1, s1, &p1, rng);
    let s2 = evolve(harness, program, t2, s2, &p2, rng);
    (s1, s2)
}

fn evolve<S: AppState>(
    harness: &AppHarness<S>,
    program: &DgsProgram<S>,
    state_type: StateTypeId,
    mut state: S,
    pred: &TagPredicate,
    rng: &mut ChaCha8Rng,
) -> S {
    let tags: Vec<Tag> = pred.iter().cloned().collect();
    if tags.is_empty() {
        return state;
    }
    let update = &program.state_types[state_type].update;
    for _ in 0..rng.gen_range(0..8) {
        let tag = tags.choose(rng).expect("non-empty").clone();
        let event = random_event(harness, &tag, rng);
        let (next, _) = update(state, &event);
        state = next;
    }
    state
}

/// Random maximal-ish independent predicate pair with `must` on the first
/// side (and on the second too, when self-independent). Sides stay within
/// the given limits.
fn independent_pair_with<S>(
    program: &DgsProgram<S>,
    must: &Tag,
    limit1: &TagPredicate,
    limit2: &TagPredicate,
    rng: &mut ChaCha8Rng,
) -> (TagPredicate, TagPredicate) {
    let rel = &program.rel;
    let mut side1: Vec<Tag> = vec![must.clone()];
    let mut side2: Vec<Tag> = Vec::new();
    if rel.indep(must, must) && limit2.contains(must) && rng.gen_bool(0.5) {
        side2.push(must.clone());
    }
    let mut rest: Vec<Tag> =
        program.alphabet.iter().filter(|t| *t != must).cloned().collect();
    rest.shuffle(rng);
    for tag in rest {
        let ok1 =
            limit1.contains(&tag) && side2.iter().all(|t| rel.indep(&tag, t));
        let ok2 =
            limit2.contains(&tag) && side1.iter().all(|t| rel.indep(&tag, t));
        match (ok1, ok2) {
            (true, true) => {
                if rel.indep(&tag, &tag) && rng.gen_bool(0.3) {
                    side1.push(tag.clone());
                    side2.push(tag);
                } else if rng.gen_bool(0.5) {
                    side1.push(tag);
                } else {
                    side2.push(tag);
                }
            }
            (true, false) => side1.push(tag),
            (false, true) => side2.push(tag),
            (false, false) => {}
        }
    }
    (TagPredicate::of(side1), TagPredicate::of(side2))
}

/// Random independent predicate pair: whole dependence components are
/// assigned to the first side, the second side, or neither, so forks are
/// exercised both on fully covered states and on states with unclaimed
/// support (which a correct fork must not lose).
fn component_pair<S>(
    program: &DgsProgram<S>,
    fork: usize,
    rng: &mut ChaCha8Rng,
) -> (TagPredicate, TagPredicate) {
    let (t1, t2) = program.forks[fork].to;
    let limit1 = &program.state_types[t1].pred;
    let limit2 = &program.state_types[t2].pred;
    let mut comps = dependence_components(program);
    comps.shuffle(rng);
    let mut side1: Vec<Tag> = Vec::new();
    let mut side2: Vec<Tag> = Vec::new();
    for comp in comps {
        if rng.gen_bool(0.2) {
            continue; // claimed by neither side
        }
        let fits1 = comp.iter().all(|t| limit1.contains(t));
        let fits2 = comp.iter().all(|t| limit2.contains(t));
        match (fits1, fits2) {
            (true, true) => {
                if rng.gen_bool(0.5) {
                    side1.extend(comp)
                } else {
                    side2.extend(comp)
                }
            }
            (true, false) => side1.extend(comp),
            (false, true) => side2.extend(comp),
            (false, false) => {}
        }
    }
    (TagPredicate::of(side1), TagPredicate::of(side2))
}

fn dependence_components<S>(program: &DgsProgram<S>) -> Vec<Vec<Tag>> {
    let tags: Vec<Tag> = program.alphabet.iter().cloned().collect();
    let mut assigned = vec![false; tags.len()];
    let mut comps = Vec::new();
    for i in 0..tags.len() {
        if assigned[i] {
            continue;
        }
        let mut comp = vec![tags[i].clone()];
        assigned[i] = true;
        let mut cursor = 0;
        while cursor < comp.len() {
            let t = comp[cursor].clone();
            cursor += 1;
            for (j, other) in tags.iter().enumerate() {
                if !assigned[j] && program.rel.depends(&t, other) {
                    assigned[j] = true;
                    comp.push(other.clone());
                }
            }
        }
        comps.push(comp);
    }
    comps
}

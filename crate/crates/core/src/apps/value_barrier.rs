//! Event-based windowing: integer values `a(i)` arrive on per-stream tags
//! and a single barrier tag `b` closes each window, emitting the sum of the
//! values since the previous barrier.

use std::sync::Arc;

use rand::Rng;

use crate::model::{DependenceRelation, Tag, TagPredicate, Value};
use crate::program::{DgsProgram, ForkDef, JoinDef, StateType};

use super::AppHarness;

/// Running sum of values in the current window.
pub type ValueBarrierState = i64;

pub fn value_tag(stream: u32) -> Tag {
    Tag::new("a", stream)
}

pub fn barrier_tag() -> Tag {
    Tag::bare("b")
}

/// `streams` is the number of value streams; values on stream `i` carry tag
/// `a(i)`. Barriers depend on every value tag and on themselves (barrier
/// outputs must come out in barrier order); values of any streams commute.
pub fn value_barrier_program(streams: u32) -> DgsProgram<ValueBarrierState> {
    let value_tags: Vec<Tag> = (0..streams).map(value_tag).collect();
    let alphabet: std::collections::BTreeSet<Tag> =
        value_tags.iter().cloned().chain([barrier_tag()]).collect();
    let rel = DependenceRelation::symmetric(
        value_tags
            .iter()
            .map(|a| (barrier_tag(), a.clone()))
            .chain([(barrier_tag(), barrier_tag())]),
    );
    let pred = TagPredicate(alphabet.clone());

    let update = Arc::new(|s: ValueBarrierState, e: &crate::model::Event| {
        match e.itag.tag.ctor.as_str() {
            "a" => (s + e.payload.as_int(), vec![]),
            "b" => (0, vec![Value::Int(s)]),
            other => panic!("unexpected tag constructor {other}"),
        }
    });
    let fork = Arc::new(|s: ValueBarrierState, _: &TagPredicate, _: &TagPredicate| (s, 0));
    let join = Arc::new(|s1: ValueBarrierState, s2: ValueBarrierState| s1 + s2);

    DgsProgram {
        name: "value-barrier".into(),
        alphabet,
        rel,
        state_types: vec![StateType { pred, update }],
        init: 0,
        forks: vec![ForkDef { name: "keep_left".into(), from: 0, to: (0, 0), func: fork }],
        joins: vec![JoinDef { name: "add_sums".into(), from: (0, 0), to: 0, func: join }],
    }
}

/// Broken variant: the fork duplicates the running sum into both states, so
/// a fork followed by a join double-counts.
fn mutated(streams: u32) -> DgsProgram<ValueBarrierState> {
    let mut p = value_barrier_program(streams);
    p.forks[0].func =
        Arc::new(|s: ValueBarrierState, _: &TagPredicate, _: &TagPredicate| (s, s));
    p
}

pub(crate) fn harness(streams: u32) -> AppHarness<ValueBarrierState> {
    AppHarness {
        program: value_barrier_program(streams),
        gen_state: Arc::new(|_, rng| rng.gen_range(0..10_000)),
        gen_payload: Arc::new(|tag, rng| {
            if tag.ctor == "a" {
                Value::Int(rng.gen_range(0..10_000))
            } else {
                Value::Unit
            }
        }),
        mutated_program: mutated(streams),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{event, sort_streams};

    #[test]
    fn barrier_first_outputs_zero() {
        let p = value_barrier_program(1);
        let input = sort_streams(&[vec![event(barrier_tag(), 0, 1, Value::Unit)]]).unwrap();
        let outs = p.sequential_spec(&input).unwrap();
        assert_eq!(outs[0].value, Value::Int(0));
    }

    #[test]
    fn windows_reset_between_barriers() {
        let p = value_barrier_program(1);
        let input = sort_streams(&[vec![
            event(value_tag(0), 0, 1, Value::Int(1)),
            event(barrier_tag(), 0, 2, Value::Unit),
            event(value_tag(0), 0, 3, Value::Int(2)),
            event(barrier_tag(), 0, 4, Value::Unit),
        ]])
        .unwrap();
        let outs = p.sequential_spec(&input).unwrap();
        let got: Vec<i64> = outs.iter().map(|o| o.value.as_int()).collect();
        assert_eq!(got, vec![1, 2]);
    }
}

//! Map from keys to counters. Increment events `i(k)` bump a key's counter;
//! read-reset events `r(k)` output the current count and zero it.
//! Increments of any keys commute; read-resets synchronize per key.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::model::{DependenceRelation, Tag, TagPredicate, Value};
use crate::program::{DgsProgram, ForkDef, JoinDef, StateType};

use super::AppHarness;

/// Absent keys read as 0.
pub type KeyCounterState = BTreeMap<u32, i64>;

pub fn inc_tag(k: u32) -> Tag {
    Tag::new("i", k)
}

pub fn read_reset_tag(k: u32) -> Tag {
    Tag::new("r", k)
}

pub fn key_counter_program(keys: &[u32]) -> DgsProgram<KeyCounterState> {
    let alphabet: std::collections::BTreeSet<Tag> = keys
        .iter()
        .flat_map(|&k| [inc_tag(k), read_reset_tag(k)])
        .collect();
    let rel = DependenceRelation::symmetric(keys.iter().flat_map(|&k| {
        [
            (read_reset_tag(k), read_reset_tag(k)),
            (read_reset_tag(k), inc_tag(k)),
        ]
    }));
    let pred = TagPredicate(alphabet.clone());

    let update = Arc::new(|mut s: KeyCounterState, e: &crate::model::Event| {
        let k = e.itag.tag.key.expect("counter tags carry a key");
        match e.itag.tag.ctor.as_str() {
            "i" => {
                *s.entry(k).or_insert(0) += 1;
                (s, vec![])
            }
            "r" => {
                let count = s.insert(k, 0).unwrap_or(0);
                (s, vec![Value::Int(count)])
            }
            other => panic!("unexpected tag constructor {other}"),
        }
    });

    // Each key's count goes to whichever forked state will process its
    // read-resets; if neither predicate claims r(k), the second state
    // keeps it.
    let fork = Arc::new(|s: KeyCounterState, p1: &TagPredicate, _p2: &TagPredicate| {
        let mut s1 = KeyCounterState::new();
        let mut s2 = KeyCounterState::new();
        for (k, v) in s {
            if p1.contains(&read_reset_tag(k)) {
                s1.insert(k, v);
            } else {
                s2.insert(k, v);
            }
        }
        (s1, s2)
    });

    let join = Arc::new(|mut s1: KeyCounterState, s2: KeyCounterState| {
        for (k, v) in s2 {
            *s1.entry(k).or_insert(0) += v;
        }
        s1
    });

    DgsProgram {
        name: "key-counter".into(),
        alphabet,
        rel,
        state_types: vec![StateType { pred, update }],
        init: KeyCounterState::new(),
        forks: vec![ForkDef { name: "split_by_key".into(), from: 0, to: (0, 0), func: fork }],
        joins: vec![JoinDef { name: "sum_counts".into(), from: (0, 0), to: 0, func: join }],
    }
}

/// Broken variant: the join takes the maximum count per key instead of the
/// sum, losing increments performed on the other side.
fn mutated(keys: &[u32]) -> DgsProgram<KeyCounterState> {
    let mut p = key_counter_program(keys);
    p.joins[0].func = Arc::new(|mut s1: KeyCounterState, s2: KeyCounterState| {
        for (k, v) in s2 {
            let e = s1.entry(k).or_insert(0);
            *e = (*e).max(v);
        }
        s1
    });
    p
}

pub(crate) fn harness(keys: &[u32]) -> AppHarness<KeyCounterState> {
    let key_vec: Vec<u32> = keys.to_vec();
    AppHarness {
        program: key_counter_program(keys),
        gen_state: Arc::new(move |_, rng| {
            let mut s = KeyCounterState::new();
            for &k in &key_vec {
                if rng.gen_bool(0.7) {
                    s.insert(k, rng.gen_range(0..100));
                }
            }
            s
        }),
        gen_payload: Arc::new(|_, _| Value::Unit),
        mutated_program: mutated(keys),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ImplTag;

    #[test]
    fn fork_routes_counts_by_read_reset_ownership() {
        let p = key_counter_program(&[1, 2]);
        let s: KeyCounterState = [(1, 5), (2, 3)].into();
        let p1 = TagPredicate::of([read_reset_tag(1), inc_tag(1)]);
        let p2 = TagPredicate::of([read_reset_tag(2), inc_tag(2)]);
        let (s1, s2) = (p.forks[0].func)(s, &p1, &p2);
        assert_eq!(s1, [(1, 5)].into());
        assert_eq!(s2, [(2, 3)].into());
    }

    #[test]
    fn fork_defaults_unclaimed_keys_to_second_state() {
        let p = key_counter_program(&[1]);
        let s: KeyCounterState = [(1, 5)].into();
        let ipred = TagPredicate::of([inc_tag(1)]);
        let (s1, s2) = (p.forks[0].func)(s, &ipred, &ipred);
        assert!(s1.is_empty());
        assert_eq!(s2, [(1, 5)].into());
    }

    #[test]
    fn read_reset_outputs_zero_for_absent_key() {
        let p = key_counter_program(&[1]);
        let e = crate::model::Event {
            itag: ImplTag::new(read_reset_tag(1), 0),
            ts: crate::model::Timestamp(1),
            seq: 0,
            payload: Value::Unit,
        };
        let (s, out) = (p.state_types[0].update)(KeyCounterState::new(), &e);
        assert_eq!(out, vec![Value::Int(0)]);
        assert_eq!(s.get(&1), Some(&0));
    }
}

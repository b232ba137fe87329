//! Simplified fraud detection: transaction events `a(i)` are flagged when
//! their value matches the running model (a modulus of the previous window's
//! aggregate), and rule events `b` emit the aggregate and retrain the model.

use std::sync::Arc;

use rand::Rng;

use serde::Serialize;

use crate::model::{DependenceRelation, Tag, TagPredicate, Value};
use crate::program::{DgsProgram, ForkDef, JoinDef, StateType};

use super::AppHarness;

pub const MODULO: i64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FraudState {
    /// Sum of transaction values since the last rule.
    pub sum: i64,
    /// Model derived from the last rule event; in `[0, MODULO)`.
    pub prev_b_modulo: i64,
}

pub fn transaction_tag(stream: u32) -> Tag {
    Tag::new("a", stream)
}

pub fn rule_tag() -> Tag {
    Tag::bare("b")
}

pub fn fraud_detection_program(streams: u32) -> DgsProgram<FraudState> {
    let txn_tags: Vec<Tag> = (0..streams).map(transaction_tag).collect();
    let alphabet: std::collections::BTreeSet<Tag> =
        txn_tags.iter().cloned().chain([rule_tag()]).collect();
    let rel = DependenceRelation::symmetric(
        txn_tags
            .iter()
            .map(|a| (rule_tag(), a.clone()))
            .chain([(rule_tag(), rule_tag())]),
    );
    let pred = TagPredicate(alphabet.clone());

    let update = Arc::new(|s: FraudState, e: &crate::model::Event| {
        match e.itag.tag.ctor.as_str() {
            "a" => {
                let v = e.payload.as_int();
                let flagged = v.rem_euclid(MODULO) == s.prev_b_modulo;
                let outs = if flagged { vec![Value::Int(v)] } else { vec![] };
                (FraudState { sum: s.sum + v, ..s }, outs)
            }
            "b" => {
                let next = FraudState {
                    sum: 0,
                    prev_b_modulo: (e.ts.0 as i64 + 1).rem_euclid(MODULO),
                };
                (next, vec![Value::Int(s.sum)])
            }
            other => panic!("unexpected tag constructor {other}"),
        }
    });
    // Forked children keep classifying against the same model; only the left
    // state retains the running sum.
    let fork = Arc::new(|s: FraudState, _: &TagPredicate, _: &TagPredicate| {
        (s, FraudState { sum: 0, prev_b_modulo: s.prev_b_modulo })
    });
    let join = Arc::new(|s1: FraudState, s2: FraudState| FraudState {
        sum: s1.sum + s2.sum,
        prev_b_modulo: s1.prev_b_modulo,
    });

    DgsProgram {
        name: "fraud".into(),
        alphabet,
        rel,
        state_types: vec![StateType { pred, update }],
        init: FraudState { sum: 0, prev_b_modulo: 0 },
        forks: vec![ForkDef { name: "share_model".into(), from: 0, to: (0, 0), func: fork }],
        joins: vec![JoinDef { name: "add_sums".into(), from: (0, 0), to: 0, func: join }],
    }
}

/// Broken variant: the fork duplicates the running sum into both children.
fn mutated(streams: u32) -> DgsProgram<FraudState> {
    let mut p = fraud_detection_program(streams);
    p.forks[0].func = Arc::new(|s: FraudState, _: &TagPredicate, _: &TagPredicate| (s, s));
    p
}

pub(crate) fn harness(streams: u32) -> AppHarness<FraudState> {
    AppHarness {
        program: fraud_detection_program(streams),
        gen_state: Arc::new(|_, rng| FraudState {
            sum: rng.gen_range(0..10_000),
            prev_b_modulo: rng.gen_range(0..MODULO),
        }),
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

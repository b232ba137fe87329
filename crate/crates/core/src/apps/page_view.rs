//! Streaming join of page views against per-page metadata. Views and
//! metadata reads of a page join against the latest update for that page;
//! updates to distinct pages are fully independent, as are views among
//! themselves.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::model::{DependenceRelation, Tag, TagPredicate, Value};
use crate::program::{DgsProgram, ForkDef, JoinDef, StateType};

use super::AppHarness;

/// Zipcode reported for pages that were never updated.
pub const NO_ZIPCODE: i64 = -1;

/// Page id -> current zipcode metadata.
pub type PageViewState = BTreeMap<u32, i64>;

pub fn update_tag(uid: u32) -> Tag {
    Tag::new("update_user_address", uid)
}

pub fn get_tag(uid: u32) -> Tag {
    Tag::new("get_user_address", uid)
}

pub fn view_tag(uid: u32) -> Tag {
    Tag::new("page_view", uid)
}

/// Updates synchronize with everything of the same page (including other
/// updates); views and gets of the same page commute with each other and
/// with everything of other pages.
pub fn page_view_program(uids: &[u32]) -> DgsProgram<PageViewState> {
    let alphabet: std::collections::BTreeSet<Tag> = uids
        .iter()
        .flat_map(|&u| [update_tag(u), get_tag(u), view_tag(u)])
        .collect();
    let rel = DependenceRelation::symmetric(uids.iter().flat_map(|&u| {
        [
            (view_tag(u), update_tag(u)),
            (get_tag(u), update_tag(u)),
            (update_tag(u), update_tag(u)),
        ]
    }));
    let pred = TagPredicate(alphabet.clone());

    let update = Arc::new(|mut s: PageViewState, e: &crate::model::Event| {
        let u = e.itag.tag.key.expect("page tags carry a page id");
        match e.itag.tag.ctor.as_str() {
            "update_user_address" => {
                let zip = e.payload.as_int();
                s.insert(u, zip);
                // Echo the update record so downstream sees the change.
                (s, vec![Value::Pair(u as i64, zip)])
            }
            "page_view" | "get_user_address" => {
                let zip = s.get(&u).copied().unwrap_or(NO_ZIPCODE);
                (s, vec![Value::Pair(u as i64, zip)])
            }
            other => panic!("unexpected tag constructor {other}"),
        }
    });

    // A page claimed by both predicates is duplicated (both legs may read
    // it; the left-biased join reconciles the equal copies). Pages claimed
    // by neither stay with the second state so that nothing is lost across
    // a fork/join cycle, mirroring the key-counter fork.
    let fork = Arc::new(|s: PageViewState, p1: &TagPredicate, p2: &TagPredicate| {
        let in_pred = |u: u32, p: &TagPredicate| {
            p.contains(&update_tag(u)) || p.contains(&get_tag(u)) || p.contains(&view_tag(u))
        };
        let mut s1 = PageViewState::new();
        let mut s2 = PageViewState::new();
        for (u, z) in s {
            let claimed1 = in_pred(u, p1);
            if claimed1 {
                s1.insert(u, z);
            }
            if in_pred(u, p2) || !claimed1 {
                s2.insert(u, z);
            }
        }
        (s1, s2)
    });

    let join = Arc::new(|mut s1: PageViewState, s2: PageViewState| {
        for (u, z) in s2 {
            s1.entry(u).or_insert(z);
        }
        s1
    });

    DgsProgram {
        name: "page-view".into(),
        alphabet,
        rel,
        state_types: vec![StateType { pred, update }],
        init: PageViewState::new(),
        forks: vec![ForkDef { name: "split_pages".into(), from: 0, to: (0, 0), func: fork }],
        joins: vec![JoinDef { name: "prefer_left".into(), from: (0, 0), to: 0, func: join }],
    }
}

/// Broken variant: the fork filters both sides with plain predicate
/// membership, dropping pages claimed by neither side.
fn mutated(uids: &[u32]) -> DgsProgram<PageViewState> {
    let mut p = page_view_program(uids);
    p.forks[0].func = Arc::new(|s: PageViewState, p1: &TagPredicate, p2: &TagPredicate| {
        let in_pred = |u: u32, p: &TagPredicate| {
            p.contains(&update_tag(u)) || p.contains(&get_tag(u)) || p.contains(&view_tag(u))
        };
        let s1: PageViewState =
            s.iter().filter(|(u, _)| in_pred(**u, p1)).map(|(u, z)| (*u, *z)).collect();
        let s2: PageViewState = s.into_iter().filter(|(u, _)| in_pred(*u, p2)).collect();
        (s1, s2)
    });
    p
}

pub(crate) fn harness(uids: &[u32]) -> AppHarness<PageViewState> {
    let uid_vec: Vec<u32> = uids.to_vec();
    AppHarness {
        program: page_view_program(uids),
        gen_state: Arc::new(move |_, rng| {
            let mut s = PageViewState::new();
            for &u in &uid_vec {
                if rng.gen_bool(0.6) {
                    s.insert(u, rng.gen_range(1..100));
                }
            }
            s
        }),
        gen_payload: Arc::new(|tag, rng| {
            if tag.ctor == "update_user_address" {
                Value::Int(rng.gen_range(1..100))
            } else {
                Value::Unit
            }
        }),
        mutated_program: mutated(uids),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{event, sort_streams};

    #[test]
    fn view_reads_latest_update() {
        let p = page_view_program(&[7]);
        let input = sort_streams(&[vec![
            event(update_tag(7), 0, 1, Value::Int(7)),
            event(view_tag(7), 0, 2, Value::Unit),
        ]])
        .unwrap();
        let outs = p.sequential_spec(&input).unwrap();
        assert_eq!(outs[1].value, Value::Pair(7, 7));
    }

    #[test]
    fn view_before_update_reads_sentinel() {
        let p = page_view_program(&[3]);
        let input = sort_streams(&[vec![event(view_tag(3), 0, 1, Value::Unit)]]).unwrap();
        let outs = p.sequential_spec(&input).unwrap();
        assert_eq!(outs[0].value, Value::Pair(3, NO_ZIPCODE));
    }

    #[test]
    fn join_prefers_left_metadata() {
        let p = page_view_program(&[1]);
        let s1: PageViewState = [(1, 10)].into();
        let s2: PageViewState = [(1, 20)].into();
        assert_eq!((p.joins[0].func)(s1, s2), [(1, 10)].into());
    }

    #[test]
    fn fork_keeps_unclaimed_pages_in_second_state() {
        let p = page_view_program(&[1, 2, 3]);
        let s: PageViewState = [(1, 10), (2, 20), (3, 30)].into();
        let p1 = TagPredicate::of([view_tag(1), update_tag(1)]);
        let p2 = TagPredicate::of([view_tag(2)]);
        let (s1, s2) = (p.forks[0].func)(s, &p1, &p2);
        assert_eq!(s1, [(1, 10)].into());
        // Page 3 is claimed by neither predicate but must survive the fork.
        assert_eq!(s2, [(2, 20), (3, 30)].into());
    }
}

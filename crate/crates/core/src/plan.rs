//! Synchronization plans: forests of binary worker trees. Leaves process
//! their events independently; an internal node joins its children, applies
//! its update, and forks back whenever it processes one of its own events.
//! `validate_plan` checks the two well-formedness properties: workers are
//! typed consistently against the program (V1), and workers without an
//! ancestor relation own disjoint, pairwise independent implementation tags
//! (V2).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DependenceRelation, ImplTag, Tag, TagPredicate};
use crate::program::{DgsProgram, StateTypeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorkerId(pub usize);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct WorkerNode {
    pub id: WorkerId,
    pub state_type: StateTypeId,
    /// Implementation tags this worker is responsible for processing.
    pub itags: BTreeSet<ImplTag>,
    /// Fork/join bindings into the program; present exactly when the node
    /// has children.
    pub fork: Option<usize>,
    pub join: Option<usize>,
    /// Children in the worker tree: empty (leaf) or exactly two.
    pub children: Vec<WorkerId>,
    /// Abstract placement label; only the optimizer cost interprets it.
    pub location: String,
}

/// A forest of rooted binary worker trees, stored as an arena indexed by
/// `WorkerId`.
#[derive(Debug, Clone, Default)]
pub struct SyncPlan {
    pub workers: Vec<WorkerNode>,
    pub roots: Vec<WorkerId>,
}

impl SyncPlan {
    pub fn node(&self, id: WorkerId) -> &WorkerNode {
        &self.workers[id.0]
    }

    pub fn parent_of(&self, id: WorkerId) -> Option<WorkerId> {
        self.workers
            .iter()
            .find(|w| w.children.contains(&id))
            .map(|w| w.id)
    }

    /// True iff `a` is a strict ancestor of `b`.
    pub fn is_ancestor(&self, a: WorkerId, b: WorkerId) -> bool {
        let mut cur = self.parent_of(b);
        while let Some(p) = cur {
            if p == a {
                return true;
            }
            cur = self.parent_of(p);
        }
        false
    }

    pub fn descendants(&self, id: WorkerId) -> BTreeSet<WorkerId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(w) = stack.pop() {
            for &c in &self.node(w).children {
                if out.insert(c) {
                    stack.push(c);
                }
            }
        }
        out
    }

    /// All tags owned anywhere in the subtree rooted at `id`; this is the
    /// predicate handed to the node's fork for that subtree.
    pub fn subtree_pred(&self, id: WorkerId) -> TagPredicate {
        let mut tags = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(w) = stack.pop() {
            for itag in &self.node(w).itags {
                tags.insert(itag.tag.clone());
            }
            stack.extend(self.node(w).children.iter().copied());
        }
        TagPredicate(tags)
    }

    /// The worker responsible for processing events of `itag`.
    pub fn responsible_worker(&self, itag: &ImplTag) -> Result<WorkerId, PlanError> {
        self.workers
            .iter()
            .find(|w| w.itags.contains(itag))
            .map(|w| w.id)
            .ok_or_else(|| PlanError::Unowned(itag.clone()))
    }

    /// The owner of `itag` together with all of its descendants: the set of
    /// workers whose event handling depends on progress of that tag.
    pub fn routing_targets(&self, itag: &ImplTag) -> Result<BTreeSet<WorkerId>, PlanError> {
        let owner = self.responsible_worker(itag)?;
        let mut targets = self.descendants(owner);
        targets.insert(owner);
        Ok(targets)
    }

    /// Depth of the deepest tree in the forest (a single leaf has depth 0).
    pub fn depth(&self) -> usize {
        fn depth_of(plan: &SyncPlan, id: WorkerId) -> usize {
            plan.node(id)
                .children
                .iter()
                .map(|&c| 1 + depth_of(plan, c))
                .max()
                .unwrap_or(0)
        }
        self.roots.iter().map(|&r| depth_of(self, r)).max().unwrap_or(0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("implementation tag {0} is not owned by any worker")]
    Unowned(ImplTag),
    #[error("plan file is malformed: {0}")]
    Malformed(String),
}

/// A violation of plan well-formedness or P-validity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanViolation {
    /// Structural: a node has one child, an unknown child id, or is shared.
    Structure(WorkerId, String),
    /// V1: a worker's state type cannot handle one of its own tags.
    PredicateMismatch { worker: WorkerId, tag: Tag },
    /// V1: fork/join bindings missing, extra, or mistyped.
    Binding(WorkerId, String),
    /// V2: two non-ancestor workers own overlapping tag sets.
    Overlap(WorkerId, WorkerId, ImplTag),
    /// V2: two non-ancestor workers own dependent tags.
    Dependent(WorkerId, WorkerId, Tag, Tag),
    /// Coverage: an input tag is unowned, or owned more than once.
    Coverage(String),
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::Structure(w, msg) => write!(f, "{w}: {msg}"),
            PlanViolation::PredicateMismatch { worker, tag } => {
                write!(f, "{worker}: state type predicate does not admit owned tag {tag}")
            }
            PlanViolation::Binding(w, msg) => write!(f, "{w}: {msg}"),
            PlanViolation::Overlap(a, b, itag) => {
                write!(f, "{a} and {b} are not ancestor-related but both own {itag}")
            }
            PlanViolation::Dependent(a, b, t1, t2) => write!(
                f,
                "{a} and {b} are not ancestor-related but own dependent tags {t1} and {t2}"
            ),
            PlanViolation::Coverage(msg) => write!(f, "coverage: {msg}"),
        }
    }
}

/// Checks structure, V1, V2, and coverage of `all_itags` by the owned sets.
/// An empty result means the plan is P-valid for the program.
pub fn validate_plan<S>(
    program: &DgsProgram<S>,
    plan: &SyncPlan,
    all_itags: &BTreeSet<ImplTag>,
) -> Vec<PlanViolation> {
    let mut out = Vec::new();

    // Structure: ids match arena slots, children come in pairs, every node
    // is reachable from exactly one root.
    for (i, w) in plan.workers.iter().enumerate() {
        if w.id.0 != i {
            out.push(PlanViolation::Structure(w.id, format!("id does not match slot {i}")));
        }
        if w.children.len() == 1 || w.children.len() > 2 {
            out.push(PlanViolation::Structure(
                w.id,
                format!("internal nodes need exactly two children, found {}", w.children.len()),
            ));
        }
        for &c in &w.children {
            if c.0 >= plan.workers.len() {
                out.push(PlanViolation::Structure(w.id, format!("unknown child {c}")));
            }
        }
    }
    if !out.is_empty() {
        return out;
    }
    let mut seen = BTreeSet::new();
    let mut stack: Vec<WorkerId> = plan.roots.clone();
    while let Some(w) = stack.pop() {
        if !seen.insert(w) {
            out.push(PlanViolation::Structure(w, "reachable from two parents".into()));
            continue;
        }
        stack.extend(plan.node(w).children.iter().copied());
    }
    for w in &plan.workers {
        if !seen.contains(&w.id) {
            out.push(PlanViolation::Structure(w.id, "not reachable from any root".into()));
        }
    }
    if !out.is_empty() {
        return out;
    }

    // V1: predicates admit owned tags; bindings present iff children, and
    // connecting the right state types.
    for w in &plan.workers {
        match program.state_types.get(w.state_type) {
            None => {
                out.push(PlanViolation::Binding(
                    w.id,
                    format!("unknown state type {}", w.state_type),
                ));
                continue;
            }
            Some(st) => {
                for itag in &w.itags {
                    if !st.pred.contains(&itag.tag) {
                        out.push(PlanViolation::PredicateMismatch {
                            worker: w.id,
                            tag: itag.tag.clone(),
                        });
                    }
                }
            }
        }
        if w.children.is_empty() {
            if w.fork.is_some() || w.join.is_some() {
                out.push(PlanViolation::Binding(w.id, "leaf carries fork/join bindings".into()));
            }
            continue;
        }
        let (fork, join) = match (w.fork, w.join) {
            (Some(f), Some(j)) => (f, j),
            _ => {
                out.push(PlanViolation::Binding(
                    w.id,
                    "internal node is missing fork/join bindings".into(),
                ));
                continue;
            }
        };
        let (Some(fk), Some(jn)) = (program.forks.get(fork), program.joins.get(join)) else {
            out.push(PlanViolation::Binding(w.id, "fork/join binding out of range".into()));
            continue;
        };
        let child_types =
            (plan.node(w.children[0]).state_type, plan.node(w.children[1]).state_type);
        if fk.from != w.state_type || fk.to != child_types {
            out.push(PlanViolation::Binding(
                w.id,
                format!("fork `{}` does not map this node's state type to its children's", fk.name),
            ));
        }
        if jn.to != w.state_type || jn.from != child_types {
            out.push(PlanViolation::Binding(
                w.id,
                format!("join `{}` does not map the children's state types to this node's", jn.name),
            ));
        }
    }

    // V2 over every unordered non-ancestor pair, including across trees.
    for a in &plan.workers {
        for b in &plan.workers {
            if b.id.0 <= a.id.0 {
                continue;
            }
            if plan.is_ancestor(a.id, b.id) || plan.is_ancestor(b.id, a.id) {
                continue;
            }
            for itag in a.itags.intersection(&b.itags) {
                out.push(PlanViolation::Overlap(a.id, b.id, itag.clone()));
            }
            for ta in &a.itags {
                for tb in &b.itags {
                    if program.rel.depends(&ta.tag, &tb.tag) {
                        out.push(PlanViolation::Dependent(
                            a.id,
                            b.id,
                            ta.tag.clone(),
                            tb.tag.clone(),
                        ));
                    }
                }
            }
        }
    }

    // Coverage: the owned sets partition `all_itags`.
    let mut owner_count: BTreeMap<&ImplTag, usize> = BTreeMap::new();
    for w in &plan.workers {
        for itag in &w.itags {
            *owner_count.entry(itag).or_insert(0) += 1;
        }
    }
    for itag in all_itags {
        match owner_count.get(itag) {
            None => out.push(PlanViolation::Coverage(format!("{itag} is unowned"))),
            Some(1) => {}
            Some(n) => {
                out.push(PlanViolation::Coverage(format!("{itag} is owned by {n} workers")))
            }
        }
    }
    out
}

/// One worker that owns everything: the degenerate sequential plan.
pub fn single_worker_plan(itags: &BTreeSet<ImplTag>) -> SyncPlan {
    SyncPlan {
        workers: vec![WorkerNode {
            id: WorkerId(0),
            state_type: 0,
            itags: itags.clone(),
            fork: None,
            join: None,
            children: Vec::new(),
            location: "local".into(),
        }],
        roots: vec![WorkerId(0)],
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PlanFileNode {
    id: usize,
    state_type: StateTypeId,
    itags: Vec<(Tag, u32)>,
    children: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fork: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    join: Option<String>,
    #[serde(default)]
    location: String,
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    workers: Vec<PlanFileNode>,
    roots: Vec<usize>,
}

/// Serializes a plan to the JSON plan-file format. Fork/join bindings are
/// written by name.
pub fn plan_to_json<S>(program: &DgsProgram<S>, plan: &SyncPlan) -> serde_json::Value {
    let workers = plan
        .workers
        .iter()
        .map(|w| PlanFileNode {
            id: w.id.0,
            state_type: w.state_type,
            itags: w.itags.iter().map(|t| (t.tag.clone(), t.stream.0)).collect(),
            children: w.children.iter().map(|c| c.0).collect(),
            fork: w.fork.map(|f| program.forks[f].name.clone()),
            join: w.join.map(|j| program.joins[j].name.clone()),
            location: w.location.clone(),
        })
        .collect();
    let file = PlanFile { workers, roots: plan.roots.iter().map(|r| r.0).collect() };
    serde_json::to_value(file).expect("plan serializes")
}

/// Parses the JSON plan-file format, resolving fork/join binding names
/// against the program.
pub fn plan_from_json<S>(
    program: &DgsProgram<S>,
    json: &serde_json::Value,
) -> Result<SyncPlan, PlanError> {
    let file: PlanFile = serde_json::from_value(json.clone())
        .map_err(|e| PlanError::Malformed(e.to_string()))?;
    let mut workers = Vec::with_capacity(file.workers.len());
    for node in file.workers {
        let fork = node
            .fork
            .map(|name| {
                program
                    .fork_by_name(&name)
                    .ok_or_else(|| PlanError::Malformed(format!("unknown fork `{name}`")))
            })
            .transpose()?;
        let join = node
            .join
            .map(|name| {
                program
                    .join_by_name(&name)
                    .ok_or_else(|| PlanError::Malformed(format!("unknown join `{name}`")))
            })
            .transpose()?;
        workers.push(WorkerNode {
            id: WorkerId(node.id),
            state_type: node.state_type,
            itags: node.itags.into_iter().map(|(tag, s)| ImplTag::new(tag, s)).collect(),
            fork,
            join,
            children: node.children.into_iter().map(WorkerId).collect(),
            location: node.location,
        });
    }
    Ok(SyncPlan { workers, roots: file.roots.into_iter().map(WorkerId).collect() })
}

// ---------------------------------------------------------------------------
// Random plan generation (test workload)
// ---------------------------------------------------------------------------

/// Generates a random P-valid plan over `itags`: a forest of binary trees of
/// bounded depth whose splits respect tag independence and whose fork/join
/// bindings are found by the same search the optimizer uses. Falls back to
/// coarser nodes whenever a split cannot be realized, so it always succeeds.
pub fn random_plan<S>(
    program: &DgsProgram<S>,
    itags: &BTreeSet<ImplTag>,
    max_depth: usize,
    seed: u64,
) -> SyncPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = SyncPlan::default();

    // Tags in distinct dependence components may split into separate trees.
    let groups = components(itags, &program.rel);
    let mut trees: Vec<BTreeSet<ImplTag>> = Vec::new();
    for group in groups {
        if !trees.is_empty() && rng.gen_bool(0.5) {
            let target = rng.gen_range(0..trees.len());
            trees[target].extend(group);
        } else {
            trees.push(group);
        }
    }
    if trees.is_empty() {
        trees.push(BTreeSet::new());
    }
    let mut roots = Vec::new();
    for tree in trees {
        let root = build_random_node(program, &mut plan, &tree, 0, max_depth, &mut rng);
        roots.push(root);
    }
    plan.roots = roots;
    plan
}

fn components(itags: &BTreeSet<ImplTag>, rel: &DependenceRelation) -> Vec<BTreeSet<ImplTag>> {
    let items: Vec<&ImplTag> = itags.iter().collect();
    let mut assigned: Vec<Option<usize>> = vec![None; items.len()];
    let mut comps: Vec<BTreeSet<ImplTag>> = Vec::new();
    for i in 0..items.len() {
        if assigned[i].is_some() {
            continue;
        }
        let id = comps.len();
        comps.push(BTreeSet::new());
        let mut stack = vec![i];
        assigned[i] = Some(id);
        while let Some(j) = stack.pop() {
            comps[id].insert(items[j].clone());
            for (l, other) in items.iter().enumerate() {
                if assigned[l].is_none() && rel.depends(&items[j].tag, &other.tag) {
                    assigned[l] = Some(id);
                    stack.push(l);
                }
            }
        }
    }
    comps
}

fn build_random_node<S>(
    program: &DgsProgram<S>,
    plan: &mut SyncPlan,
    itags: &BTreeSet<ImplTag>,
    state_type: StateTypeId,
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> WorkerId {
    let leaf = |plan: &mut SyncPlan| {
        let id = WorkerId(plan.workers.len());
        plan.workers.push(WorkerNode {
            id,
            state_type,
            itags: itags.clone(),
            fork: None,
            join: None,
            children: Vec::new(),
            location: format!("n{}", id.0),
        });
        id
    };

    if depth == 0 || itags.len() < 2 || rng.gen_bool(0.25) {
        return leaf(plan);
    }
    let pairs = program.compatible_pairs(state_type);
    let Some(&(fork, join)) = pairs.as_slice().choose(rng) else {
        return leaf(plan);
    };
    let (t1, t2) = program.forks[fork].to;

    // Pick a random owned subset, then split the rest into two independent
    // halves along dependence components.
    for _ in 0..8 {
        let mut owned = BTreeSet::new();
        let mut rest: Vec<ImplTag> = Vec::new();
        for itag in itags {
            if rng.gen_bool(0.2) {
                owned.insert(itag.clone());
            } else {
                rest.push(itag.clone());
            }
        }
        let comps = components(&rest.into_iter().collect(), &program.rel);
        if comps.len() < 2 {
            continue;
        }
        let mut left = BTreeSet::new();
        let mut right = BTreeSet::new();
        for comp in comps {
            let tags_ok = |side: &BTreeSet<ImplTag>, ty: StateTypeId| {
                comp.iter().chain(side.iter()).all(|t| {
                    program.state_types[ty].pred.contains(&t.tag)
                })
            };
            if (left.is_empty() || rng.gen_bool(0.5)) && tags_ok(&left, t1) {
                left.extend(comp);
            } else if tags_ok(&right, t2) {
                right.extend(comp);
            } else if tags_ok(&left, t1) {
                left.extend(comp);
            } else {
                left.clear();
                break;
            }
        }
        if left.is_empty() || right.is_empty() {
            continue;
        }
        let id = WorkerId(plan.workers.len());
        plan.workers.push(WorkerNode {
            id,
            state_type,
            itags: owned,
            fork: Some(fork),
            join: Some(join),
            children: Vec::new(),
            location: format!("n{}", id.0),
        });
        let l = build_random_node(program, plan, &left, t1, depth - 1, rng);
        let r = build_random_node(program, plan, &right, t2, depth - 1, rng);
        plan.workers[id.0].children = vec![l, r];
        return id;
    }
    leaf(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::key_counter_program;
    use crate::model::Tag;

    fn itag(ctor: &str, key: u32, stream: u32) -> ImplTag {
        ImplTag::new(Tag::new(ctor, key), stream)
    }

    /// The five-stream plan from the running example: the root delegates
    /// key 1 wholly to one leaf, and an internal node owning r(2) fans the
    /// two i(2) streams out to two leaves.
    pub(crate) fn example_plan() -> (SyncPlan, BTreeSet<ImplTag>) {
        let itags: BTreeSet<ImplTag> = [
            itag("r", 1, 0),
            itag("i", 1, 1),
            itag("r", 2, 2),
            itag("i", 2, 3),
            itag("i", 2, 4),
        ]
        .into();
        let plan = SyncPlan {
            workers: vec![
                WorkerNode {
                    id: WorkerId(0),
                    state_type: 0,
                    itags: BTreeSet::new(),
                    fork: Some(0),
                    join: Some(0),
                    children: vec![WorkerId(1), WorkerId(2)],
                    location: "E0".into(),
                },
                WorkerNode {
                    id: WorkerId(1),
                    state_type: 0,
                    itags: [itag("r", 1, 0), itag("i", 1, 1)].into(),
                    fork: None,
                    join: None,
                    children: vec![],
                    location: "E1".into(),
                },
                WorkerNode {
                    id: WorkerId(2),
                    state_type: 0,
                    itags: [itag("r", 2, 2)].into(),
                    fork: Some(0),
                    join: Some(0),
                    children: vec![WorkerId(3), WorkerId(4)],
                    location: "E0".into(),
                },
                WorkerNode {
                    id: WorkerId(3),
                    state_type: 0,
                    itags: [itag("i", 2, 3)].into(),
                    fork: None,
                    join: None,
                    children: vec![],
                    location: "E2".into(),
                },
                WorkerNode {
                    id: WorkerId(4),
                    state_type: 0,
                    itags: [itag("i", 2, 4)].into(),
                    fork: None,
                    join: None,
                    children: vec![],
                    location: "E3".into(),
                },
            ],
            roots: vec![WorkerId(0)],
        };
        (plan, itags)
    }

    #[test]
    fn example_plan_is_valid() {
        let program = key_counter_program(&[1, 2]);
        let (plan, itags) = example_plan();
        assert_eq!(validate_plan(&program, &plan, &itags), vec![]);
    }

    #[test]
    fn sibling_leaves_with_dependent_tags_violate_v2() {
        let program = key_counter_program(&[1]);
        let itags: BTreeSet<ImplTag> = [itag("i", 1, 0), itag("r", 1, 1)].into();
        let plan = SyncPlan {
            workers: vec![
                WorkerNode {
                    id: WorkerId(0),
                    state_type: 0,
                    itags: BTreeSet::new(),
                    fork: Some(0),
                    join: Some(0),
                    children: vec![WorkerId(1), WorkerId(2)],
                    location: String::new(),
                },
                WorkerNode {
                    id: WorkerId(1),
                    state_type: 0,
                    itags: [itag("i", 1, 0)].into(),
                    fork: None,
                    join: None,
                    children: vec![],
                    location: String::new(),
                },
                WorkerNode {
                    id: WorkerId(2),
                    state_type: 0,
                    itags: [itag("r", 1, 1)].into(),
                    fork: None,
                    join: None,
                    children: vec![],
                    location: String::new(),
                },
            ],
            roots: vec![WorkerId(0)],
        };
        let violations = validate_plan(&program, &plan, &itags);
        assert!(violations
            .iter()
            .any(|v| matches!(v, PlanViolation::Dependent(..))));
    }

    #[test]
    fn single_worker_plan_is_valid() {
        let program = key_counter_program(&[1, 2]);
        let itags: BTreeSet<ImplTag> =
            [itag("i", 1, 0), itag("r", 1, 0), itag("i", 2, 0), itag("r", 2, 0)].into();
        let plan = single_worker_plan(&itags);
        assert_eq!(validate_plan(&program, &plan, &itags), vec![]);
        for t in &itags {
            assert_eq!(plan.responsible_worker(t).unwrap(), WorkerId(0));
        }
    }

    #[test]
    fn responsibility_and_routing_follow_the_tree() {
        let (plan, _) = example_plan();
        assert_eq!(plan.responsible_worker(&itag("r", 2, 2)).unwrap(), WorkerId(2));
        assert_eq!(plan.responsible_worker(&itag("i", 2, 4)).unwrap(), WorkerId(4));
        assert_eq!(
            plan.routing_targets(&itag("r", 2, 2)).unwrap(),
            [WorkerId(2), WorkerId(3), WorkerId(4)].into()
        );
        assert_eq!(plan.routing_targets(&itag("i", 2, 3)).unwrap(), [WorkerId(3)].into());
        assert_eq!(
            plan.routing_targets(&itag("i", 1, 1)).unwrap(),
            [WorkerId(1)].into()
        );
        assert_eq!(
            plan.responsible_worker(&itag("i", 9, 0)),
            Err(PlanError::Unowned(itag("i", 9, 0)))
        );
    }

    #[test]
    fn routing_targets_of_non_ancestors_are_disjoint() {
        let (plan, itags) = example_plan();
        for a in &itags {
            for b in &itags {
                let wa = plan.responsible_worker(a).unwrap();
                let wb = plan.responsible_worker(b).unwrap();
                if wa == wb || plan.is_ancestor(wa, wb) || plan.is_ancestor(wb, wa) {
                    continue;
                }
                let ta = plan.routing_targets(a).unwrap();
                let tb = plan.routing_targets(b).unwrap();
                assert!(ta.is_disjoint(&tb), "{a} and {b} route into overlapping sets");
            }
        }
    }

    #[test]
    fn plan_json_roundtrip() {
        let program = key_counter_program(&[1, 2]);
        let (plan, itags) = example_plan();
        let json = plan_to_json(&program, &plan);
        let back = plan_from_json(&program, &json).unwrap();
        assert_eq!(validate_plan(&program, &back, &itags), vec![]);
        assert_eq!(back.workers.len(), plan.workers.len());
        for (a, b) in plan.workers.iter().zip(back.workers.iter()) {
            assert_eq!(a.itags, b.itags);
            assert_eq!(a.children, b.children);
            assert_eq!(a.fork, b.fork);
            assert_eq!(a.location, b.location);
        }
    }

    #[test]
    fn heterogeneous_state_types_check_bindings() {
        let program = crate::program::pair_split_program();
        let x = ImplTag::new(Tag::bare("x"), 0);
        let y = ImplTag::new(Tag::bare("y"), 1);
        let itags: BTreeSet<ImplTag> = [x.clone(), y.clone()].into();
        let mut plan = SyncPlan {
            workers: vec![
                WorkerNode {
                    id: WorkerId(0),
                    state_type: 0,
                    itags: BTreeSet::new(),
                    fork: Some(0),
                    join: Some(0),
                    children: vec![WorkerId(1), WorkerId(2)],
                    location: String::new(),
                },
                WorkerNode {
                    id: WorkerId(1),
                    state_type: 1,
                    itags: [x].into(),
                    fork: None,
                    join: None,
                    children: vec![],
                    location: String::new(),
                },
                WorkerNode {
                    id: WorkerId(2),
                    state_type: 2,
                    itags: [y].into(),
                    fork: None,
                    join: None,
                    children: vec![],
                    location: String::new(),
                },
            ],
            roots: vec![WorkerId(0)],
        };
        assert_eq!(validate_plan(&program, &plan, &itags), vec![]);

        // Swapping the children breaks both the fork/join typing and the
        // leaf predicates.
        plan.workers[0].children = vec![WorkerId(2), WorkerId(1)];
        let violations = validate_plan(&program, &plan, &itags);
        assert!(violations.iter().any(|v| matches!(v, PlanViolation::Binding(..))));

        plan.workers[0].children = vec![WorkerId(1), WorkerId(2)];
        plan.workers[1].state_type = 2;
        let violations = validate_plan(&program, &plan, &itags);
        assert!(violations
            .iter()
            .any(|v| matches!(v, PlanViolation::PredicateMismatch { .. })));
    }

    #[test]
    fn random_plans_are_valid() {
        let program = key_counter_program(&[1, 2, 3]);
        let itags: BTreeSet<ImplTag> = (0..3)
            .flat_map(|s| {
                [itag("i", s + 1, s), itag("r", s + 1, 3)]
            })
            .collect();
        for seed in 0..60 {
            let plan = random_plan(&program, &itags, 4, seed);
            assert_eq!(
                validate_plan(&program, &plan, &itags),
                vec![],
                "seed {seed} produced an invalid plan"
            );
            assert!(plan.depth() <= 4);
        }
    }
}

//! Plan synthesis that minimizes communication: build the graph of
//! implementation tags with edges between dependent tags, repeatedly strip
//! the lowest-rate tags until the graph falls apart, recurse on the
//! components, and then realize the resulting tag tree as a worker tree with
//! concrete state types and fork/join bindings.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DependenceRelation, ImplTag, Message, Tag};
use crate::plan::{SyncPlan, WorkerId, WorkerNode};
use crate::program::{DgsProgram, StateTypeId};

/// Input rate estimate and producing location for one implementation tag.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEntry {
    pub rate: f64,
    pub location: String,
}

/// Per-tag rates and locations for a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateSpec {
    pub entries: BTreeMap<ImplTag, RateEntry>,
}

impl RateSpec {
    pub fn rate(&self, itag: &ImplTag) -> f64 {
        self.entries.get(itag).map_or(0.0, |e| e.rate)
    }

    pub fn location(&self, itag: &ImplTag) -> &str {
        self.entries.get(itag).map_or("", |e| e.location.as_str())
    }

    pub fn itags(&self) -> BTreeSet<ImplTag> {
        self.entries.keys().cloned().collect()
    }
}

/// Derives a rate spec from observed streams: the rate of an implementation
/// tag is its event count, and its location is its stream's label.
pub fn rates_from_streams(streams: &[Vec<Message>]) -> RateSpec {
    let mut entries: BTreeMap<ImplTag, RateEntry> = BTreeMap::new();
    for stream in streams {
        for msg in stream {
            if let Message::Event(e) = msg {
                entries
                    .entry(e.itag.clone())
                    .or_insert_with(|| RateEntry {
                        rate: 0.0,
                        location: e.itag.stream.to_string(),
                    })
                    .rate += 1.0;
            }
        }
    }
    RateSpec { entries }
}

/// Undirected graph over implementation tags; edges connect dependent tags,
/// including self-loops for self-dependent tags.
#[derive(Debug, Clone)]
pub struct TagGraph {
    pub vertices: BTreeSet<ImplTag>,
    pub edges: BTreeSet<(ImplTag, ImplTag)>,
}

pub fn build_tag_graph(itags: &BTreeSet<ImplTag>, rel: &DependenceRelation) -> TagGraph {
    let mut edges = BTreeSet::new();
    for a in itags {
        for b in itags {
            if a <= b && rel.depends(&a.tag, &b.tag) {
                edges.insert((a.clone(), b.clone()));
            }
        }
    }
    TagGraph { vertices: itags.clone(), edges }
}

impl TagGraph {
    fn neighbors<'a>(&'a self, v: &'a ImplTag) -> impl Iterator<Item = &'a ImplTag> {
        self.edges.iter().filter_map(move |(a, b)| {
            if a == v && b != v {
                Some(b)
            } else if b == v && a != v {
                Some(a)
            } else {
                None
            }
        })
    }

    /// Connected components of the subgraph induced by `alive`.
    fn components(&self, alive: &BTreeSet<ImplTag>) -> Vec<BTreeSet<ImplTag>> {
        let mut remaining = alive.clone();
        let mut comps = Vec::new();
        while let Some(start) = remaining.iter().next().cloned() {
            let mut comp = BTreeSet::new();
            let mut stack = vec![start.clone()];
            remaining.remove(&start);
            while let Some(v) = stack.pop() {
                comp.insert(v.clone());
                let next: Vec<ImplTag> = self
                    .neighbors(&v)
                    .filter(|n| remaining.contains(*n))
                    .cloned()
                    .collect();
                for n in next {
                    remaining.remove(&n);
                    stack.push(n);
                }
            }
            comps.push(comp);
        }
        comps
    }
}

/// Removes vertices in ascending rate order (ties by tag identity) until the
/// residual graph has at least two connected components. If it never
/// disconnects, everything is removed and no components remain.
pub fn greedy_split(
    graph: &TagGraph,
    rates: &RateSpec,
) -> (Vec<ImplTag>, Vec<BTreeSet<ImplTag>>) {
    let mut alive = graph.vertices.clone();
    let mut removed = Vec::new();
    loop {
        if alive.is_empty() {
            return (removed, Vec::new());
        }
        let comps = graph.components(&alive);
        if comps.len() >= 2 {
            return (removed, comps);
        }
        let victim = alive
            .iter()
            .min_by(|a, b| {
                rates
                    .rate(a)
                    .partial_cmp(&rates.rate(b))
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.cmp(b))
            })
            .cloned()
            .expect("alive set is non-empty");
        alive.remove(&victim);
        removed.push(victim);
    }
}

/// Binary tree of tag ownership: each node owns the tags removed at its
/// split; leaves own whatever remained when the residual graph emptied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagTree {
    /// Tags owned by this node, in removal order.
    pub owned: Vec<ImplTag>,
    /// Zero (leaf) or two children.
    pub children: Vec<TagTree>,
}

impl TagTree {
    pub fn all_itags(&self) -> BTreeSet<ImplTag> {
        let mut out: BTreeSet<ImplTag> = self.owned.iter().cloned().collect();
        for c in &self.children {
            out.extend(c.all_itags());
        }
        out
    }

    pub fn total_rate(&self, rates: &RateSpec) -> f64 {
        self.all_itags().iter().map(|t| rates.rate(t)).sum()
    }
}

/// Recursively applies [`greedy_split`]. More than two components are
/// reassociated into a chain of binary splits, heaviest component first.
pub fn build_tag_tree(
    itags: &BTreeSet<ImplTag>,
    rel: &DependenceRelation,
    rates: &RateSpec,
) -> TagTree {
    if itags.is_empty() {
        return TagTree { owned: Vec::new(), children: Vec::new() };
    }
    let graph = build_tag_graph(itags, rel);
    let (removed, comps) = greedy_split(&graph, rates);
    if comps.is_empty() {
        return TagTree { owned: removed, children: Vec::new() };
    }
    let mut subtrees: Vec<TagTree> =
        comps.iter().map(|c| build_tag_tree(c, rel, rates)).collect();
    subtrees.sort_by(|a, b| {
        b.total_rate(rates)
            .partial_cmp(&a.total_rate(rates))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.all_itags().cmp(&b.all_itags()))
    });
    let mut chained = chain(subtrees);
    debug_assert_eq!(chained.children.len(), 2);
    chained.owned = removed;
    chained
}

/// Left-fold of subtrees (already sorted by descending rate) into a spine of
/// binary splits: the heaviest subtree peels off first.
fn chain(mut subtrees: Vec<TagTree>) -> TagTree {
    assert!(subtrees.len() >= 2);
    if subtrees.len() == 2 {
        let right = subtrees.pop().unwrap();
        let left = subtrees.pop().unwrap();
        return TagTree { owned: Vec::new(), children: vec![left, right] };
    }
    let left = subtrees.remove(0);
    let right = chain(subtrees);
    TagTree { owned: Vec::new(), children: vec![left, right] }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OptimizerError {
    #[error("no fork/join assignment realizes the tag tree node owning {{{0}}}")]
    NoMatch(String),
}

/// Realizes a tag tree as a synchronization plan: a depth-first search over
/// the program's fork/join pairs (declaration order, first success) assigns
/// state types and bindings. Workers are placed at the location of their
/// highest-rate owned tag; a worker that owns nothing inherits the location
/// of its heaviest child subtree.
pub fn synthesize_plan<S>(
    program: &DgsProgram<S>,
    tree: &TagTree,
    rates: &RateSpec,
) -> Result<SyncPlan, OptimizerError> {
    let mut plan = SyncPlan::default();
    let root = assign(program, tree, 0, rates, &mut plan)?;
    plan.roots = vec![root];
    Ok(plan)
}

fn assign<S>(
    program: &DgsProgram<S>,
    tree: &TagTree,
    state_type: StateTypeId,
    rates: &RateSpec,
    plan: &mut SyncPlan,
) -> Result<WorkerId, OptimizerError> {
    let pred = &program.state_types[state_type].pred;
    if tree.owned.iter().any(|t| !pred.contains(&t.tag)) {
        return Err(OptimizerError::NoMatch(describe(tree)));
    }
    let id = WorkerId(plan.workers.len());
    plan.workers.push(WorkerNode {
        id,
        state_type,
        itags: tree.owned.iter().cloned().collect(),
        fork: None,
        join: None,
        children: Vec::new(),
        location: String::new(),
    });

    if tree.children.is_empty() {
        plan.workers[id.0].location = owned_location(tree, rates);
        return Ok(id);
    }

    let (left, right) = (&tree.children[0], &tree.children[1]);
    let checkpoint = plan.workers.len();
    for (fork, join) in program.compatible_pairs(state_type) {
        let (t1, t2) = program.forks[fork].to;
        let admits = |sub: &TagTree, ty: StateTypeId| {
            sub.all_itags()
                .iter()
                .all(|t| program.state_types[ty].pred.contains(&t.tag))
        };
        if !admits(left, t1) || !admits(right, t2) {
            continue;
        }
        let Ok(l) = assign(program, left, t1, rates, plan) else {
            plan.workers.truncate(checkpoint);
            continue;
        };
        let Ok(r) = assign(program, right, t2, rates, plan) else {
            plan.workers.truncate(checkpoint);
            continue;
        };
        plan.workers[id.0].fork = Some(fork);
        plan.workers[id.0].join = Some(join);
        plan.workers[id.0].children = vec![l, r];
        plan.workers[id.0].location = if tree.owned.is_empty() {
            let heavier =
                if left.total_rate(rates) >= right.total_rate(rates) { l } else { r };
            plan.workers[heavier.0].location.clone()
        } else {
            owned_location(tree, rates)
        };
        return Ok(id);
    }
    plan.workers.truncate(checkpoint);
    plan.workers.pop();
    Err(OptimizerError::NoMatch(describe(tree)))
}

fn describe(tree: &TagTree) -> String {
    tree.owned
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn owned_location(tree: &TagTree, rates: &RateSpec) -> String {
    tree.owned
        .iter()
        .max_by(|a, b| {
            rates
                .rate(a)
                .partial_cmp(&rates.rate(b))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| b.cmp(a))
        })
        .map(|t| rates.location(t).to_string())
        .unwrap_or_default()
}

/// End-to-end plan synthesis from rates: tag graph, greedy tag tree, then
/// fork/join assignment.
pub fn optimize_plan<S>(
    program: &DgsProgram<S>,
    rates: &RateSpec,
) -> Result<SyncPlan, OptimizerError> {
    let tree = build_tag_tree(&rates.itags(), &program.rel, rates);
    synthesize_plan(program, &tree, rates)
}

/// Communication cost proxy: rate-weighted penalty for tags owned by
/// internal workers, plus a broadcast penalty proportional to the number of
/// strict descendants each tag has to reach. Lower is better.
pub fn comm_cost(plan: &SyncPlan, rates: &RateSpec) -> f64 {
    let mut cost = 0.0;
    for w in &plan.workers {
        let internal = !w.children.is_empty();
        for itag in &w.itags {
            let rate = rates.rate(itag);
            if internal {
                cost += rate;
            }
            let targets = plan
                .routing_targets(itag)
                .map(|t| t.len())
                .unwrap_or(1);
            cost += rate * (targets as f64 - 1.0);
        }
    }
    cost
}

/// Graphviz rendering of a plan: one box per worker showing ownership and
/// placement.
pub fn plan_to_dot(plan: &SyncPlan) -> String {
    let mut out = String::from("digraph plan {\n  node [shape=box];\n");
    for w in &plan.workers {
        let tags = w
            .itags
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str(&format!(
            "  w{} [label=\"w{}\\n{{{}}}\\n@{}\"];\n",
            w.id.0, w.id.0, tags, w.location
        ));
    }
    for w in &plan.workers {
        for c in &w.children {
            out.push_str(&format!("  w{} -> w{};\n", w.id.0, c.0));
        }
    }
    out.push_str("}\n");
    out
}

// ---------------------------------------------------------------------------
// Rates file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RatesFileEntry {
    tag: Tag,
    stream: u32,
    rate: f64,
    location: String,
}

#[derive(Serialize, Deserialize)]
struct RatesFile {
    itags: Vec<RatesFileEntry>,
}

pub fn rates_to_json(rates: &RateSpec) -> serde_json::Value {
    let itags = rates
        .entries
        .iter()
        .map(|(itag, e)| RatesFileEntry {
            tag: itag.tag.clone(),
            stream: itag.stream.0,
            rate: e.rate,
            location: e.location.clone(),
        })
        .collect();
    serde_json::to_value(RatesFile { itags }).expect("rates serialize")
}

pub fn rates_from_json(json: &serde_json::Value) -> Result<RateSpec, String> {
    let file: RatesFile = serde_json::from_value(json.clone()).map_err(|e| e.to_string())?;
    let mut entries = BTreeMap::new();
    for e in file.itags {
        if e.rate <= 0.0 {
            return Err(format!("rate for {}({}) must be positive", e.tag, e.stream));
        }
        entries.insert(
            ImplTag::new(e.tag, e.stream),
            RateEntry { rate: e.rate, location: e.location },
        );
    }
    Ok(RateSpec { entries })
}

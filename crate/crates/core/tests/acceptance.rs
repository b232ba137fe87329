//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL/SKIP line (visible with `cargo test --test acceptance --
//! --nocapture`). Criteria cover the golden key-counter run, consistency and
//! mutation checking, end-to-end determinism over random plans, agreement of
//! the two execution modes, the optimizer's reference layout, mailbox
//! release order, synchronization economy, checkpoint soundness, throughput
//! scaling, and heartbeat liveness.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use depstream::apps::{
    self, dispatch, AppHarness, AppKind, AppState, AppVisitor, GenConfig,
};
use depstream::consistency::run_consistency_suite;
use depstream::model::{
    collect_event_itags, event, sort_streams, ImplTag, Message, Tag, TagPredicate, Value,
};
use depstream::optimizer::{optimize_plan, rates_from_streams, RateEntry, RateSpec};
use depstream::plan::{random_plan, single_worker_plan, validate_plan, SyncPlan};
use depstream::program::{eval_wire_diagram, Output, WireDiagram};
use depstream::runtime::{
    inject_heartbeats, run_plan, verify_release_logs, Mode, RunOptions, RuntimeError,
};

fn pass(criterion: u32, detail: &str) {
    println!("criterion {criterion:02} PASS: {detail}");
}

fn skip(criterion: u32, detail: &str) {
    println!("criterion {criterion:02} SKIP: {detail}");
}

fn sorted(mut outs: Vec<Output>) -> Vec<Output> {
    outs.sort();
    outs
}

fn within(budget: Duration, start: Instant, what: &str) {
    let elapsed = start.elapsed();
    assert!(
        elapsed <= budget,
        "{what} took {elapsed:?}, over the {budget:?} budget"
    );
}

// ---------------------------------------------------------------------------
// Criterion 1: golden key-counter run through all three semantics.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_golden_key_counter() {
    let start = Instant::now();
    let program = apps::key_counter_program(&[1, 2]);
    let i = |k| Tag::new("i", k);
    let r = |k| Tag::new("r", k);
    let streams = vec![vec![
        event(i(1), 0, 1, Value::Unit),
        event(i(2), 0, 2, Value::Unit),
        event(r(1), 0, 3, Value::Unit),
        event(i(2), 0, 4, Value::Unit),
        event(r(1), 0, 5, Value::Unit),
    ]];
    let input = sort_streams(&streams).unwrap();
    let golden = vec![Value::Int(1), Value::Int(0)];

    // Sequential fold.
    let spec = program.sequential_spec(&input).unwrap();
    let spec_vals: Vec<Value> = spec.iter().map(|o| o.value.clone()).collect();
    assert_eq!(spec_vals, golden, "sequential fold");

    // Diagram with the doubly forked increment shape: increments run on
    // parallel legs, read-resets between the fork/join groups.
    let diagram = WireDiagram::Seq(
        Box::new(WireDiagram::Par {
            fork: 0,
            join: 0,
            pred1: TagPredicate::of([i(1)]),
            pred2: TagPredicate::of([i(2)]),
            left: Box::new(WireDiagram::Leaf(vec![input[0].clone()])),
            right: Box::new(WireDiagram::Leaf(vec![input[1].clone()])),
        }),
        Box::new(WireDiagram::Seq(
            Box::new(WireDiagram::Leaf(vec![input[2].clone()])),
            Box::new(WireDiagram::Seq(
                Box::new(WireDiagram::Par {
                    fork: 0,
                    join: 0,
                    pred1: TagPredicate::of([i(2)]),
                    pred2: TagPredicate::of([i(2)]),
                    left: Box::new(WireDiagram::Leaf(vec![input[3].clone()])),
                    right: Box::new(WireDiagram::Leaf(vec![])),
                }),
                Box::new(WireDiagram::Leaf(vec![input[4].clone()])),
            )),
        )),
    );
    let diagram_outs = eval_wire_diagram(&program, &diagram, 17).unwrap();
    assert_eq!(sorted(diagram_outs), sorted(spec.clone()), "wire diagram");

    // Single-worker plan execution.
    let plan = single_worker_plan(&collect_event_itags(&streams));
    let outcome = run_plan(&program, &plan, &streams, &RunOptions::simulated(1)).unwrap();
    let run_vals: Vec<Value> = outcome.outputs.iter().map(|o| o.value.clone()).collect();
    assert_eq!(run_vals, golden, "single-worker run");

    within(Duration::from_secs(1), start, "golden key-counter run");
    pass(1, "key-counter golden outputs [1, 0] via fold, diagram, and plan execution");
}

// ---------------------------------------------------------------------------
// Criterion 2: consistency suites pass and injected bugs are caught.
// ---------------------------------------------------------------------------

struct ConsistencyGate {
    kind: AppKind,
    cases: u64,
}

impl AppVisitor for ConsistencyGate {
    type Out = ();

    fn visit<S: AppState>(self, harness: AppHarness<S>) {
        let clean =
            run_consistency_suite(&harness, &harness.program, self.cases, 101).unwrap();
        assert!(
            clean.passed(),
            "{}: {} unexpected consistency failures",
            self.kind,
            clean.failure_count()
        );
        assert_eq!(clean.c1.cases, self.cases);
        assert_eq!(clean.c2.cases, self.cases);
        assert_eq!(clean.c3.cases, self.cases);

        let mutated =
            run_consistency_suite(&harness, &harness.mutated_program, self.cases, 202)
                .unwrap();
        assert!(
            !mutated.passed(),
            "{}: injected fork/join bug escaped {} cases",
            self.kind,
            self.cases
        );
    }
}

#[test]
fn criterion_02_consistency_and_mutations() {
    let start = Instant::now();
    let config = GenConfig { streams: 3, keys: 3, ..Default::default() };
    for kind in AppKind::all() {
        dispatch(kind, &config, ConsistencyGate { kind, cases: 1000 });
    }
    within(Duration::from_secs(30), start, "consistency suites");
    pass(2, "four apps x 1000 cases/condition clean; every injected bug caught");
}

// ---------------------------------------------------------------------------
// Criteria 3 and 6: deterministic end-to-end equivalence over random plans,
// with dependent-order-preserving release logs on every run.
// ---------------------------------------------------------------------------

struct DeterminismDriver {
    kind: AppKind,
    inputs: u64,
    plans_per_input: u64,
    seed_base: u64,
}

impl AppVisitor for DeterminismDriver {
    type Out = u64;

    fn visit<S: AppState>(self, harness: AppHarness<S>) -> u64 {
        let mut triples = 0;
        for i in 0..self.inputs {
            let events = [60, 150, 400, 900, 2000][(i % 5) as usize]
                + if i + 1 == self.inputs { 3000 } else { 0 };
            let config = GenConfig {
                // Parallel streams plus the dedicated synchronizing stream
                // stay within five streams total.
                streams: 1 + (i % 4) as u32,
                events,
                sync_ratio: 5 + (i % 4) * 20,
                heartbeat_period: 3 + i % 13,
                keys: 1 + (i % 4) as u32,
                seed: self.seed_base + i,
            };
            let streams = apps::generate(self.kind, &config);
            assert!(events <= 5_000 && streams.len() <= 5);
            let input = sort_streams(&streams).unwrap();
            let expected = sorted(harness.program.sequential_spec(&input).unwrap());
            let itags = collect_event_itags(&streams);
            for j in 0..self.plans_per_input {
                let plan_seed = self.seed_base * 7919 + i * 100 + j;
                let plan = random_plan(&harness.program, &itags, 4, plan_seed);
                assert!(plan.depth() <= 4);
                assert_eq!(
                    validate_plan(&harness.program, &plan, &itags),
                    vec![],
                    "{}: invalid random plan (seed {plan_seed})",
                    self.kind
                );
                let options = RunOptions {
                    mode: Mode::Simulated { seed: plan_seed ^ 0x5eed },
                    capture_release_logs: true,
                    ..Default::default()
                };
                let outcome = run_plan(&harness.program, &plan, &streams, &options)
                    .unwrap_or_else(|e| {
                        panic!("{}: input {i} plan {j}: {e}", self.kind)
                    });
                assert_eq!(
                    sorted(outcome.outputs),
                    expected,
                    "{}: input {i} plan {j} diverged (zero tolerance)",
                    self.kind
                );
                verify_release_logs(
                    &harness.program,
                    &plan,
                    &streams,
                    outcome.release_logs.as_ref().expect("logs captured"),
                )
                .unwrap_or_else(|e| panic!("{}: input {i} plan {j}: {e}", self.kind));
                triples += 1;
            }
        }
        triples
    }
}

#[test]
fn criterion_03_end_to_end_determinism() {
    let start = Instant::now();
    for kind in AppKind::all() {
        let config = GenConfig { streams: 4, keys: 4, ..Default::default() };
        let triples = dispatch(
            kind,
            &config,
            DeterminismDriver { kind, inputs: 25, plans_per_input: 8, seed_base: 1 },
        );
        assert_eq!(triples, 200, "{kind}: expected 200 triples");
    }
    within(Duration::from_secs(120), start, "end-to-end determinism");
    pass(3, "4 apps x 200 random (input, plan, seed) triples equal the sequential fold");
}

#[test]
fn criterion_06_mailbox_release_order() {
    let start = Instant::now();
    for kind in AppKind::all() {
        let config = GenConfig { streams: 4, keys: 4, ..Default::default() };
        let triples = dispatch(
            kind,
            &config,
            DeterminismDriver { kind, inputs: 10, plans_per_input: 5, seed_base: 9001 },
        );
        assert_eq!(triples, 50);
    }
    within(Duration::from_secs(120), start, "mailbox validity");
    pass(
        6,
        "release logs are dependent-order-preserving permutations of delivered events on every run",
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: concurrent and simulated modes agree.
// ---------------------------------------------------------------------------

struct ModeAgreement {
    kind: AppKind,
    pairs: u64,
}

impl AppVisitor for ModeAgreement {
    type Out = ();

    fn visit<S: AppState>(self, harness: AppHarness<S>) {
        for i in 0..self.pairs {
            let config = GenConfig {
                streams: 1 + (i % 4) as u32,
                events: 150 + (i % 4) * 200,
                sync_ratio: 10 + i * 3,
                heartbeat_period: 4 + i % 9,
                keys: 1 + (i % 3) as u32,
                seed: 33 + i,
            };
            let streams = apps::generate(self.kind, &config);
            let itags = collect_event_itags(&streams);
            let plan = random_plan(&harness.program, &itags, 3, 555 + i);
            let sim =
                run_plan(&harness.program, &plan, &streams, &RunOptions::simulated(i))
                    .unwrap_or_else(|e| panic!("{}: pair {i} simulated: {e}", self.kind));
            let conc =
                run_plan(&harness.program, &plan, &streams, &RunOptions::concurrent())
                    .unwrap_or_else(|e| panic!("{}: pair {i} concurrent: {e}", self.kind));
            assert_eq!(
                sorted(sim.outputs),
                sorted(conc.outputs),
                "{}: pair {i}: modes disagree",
                self.kind
            );
        }
    }
}

#[test]
fn criterion_04_mode_agreement() {
    let start = Instant::now();
    for kind in AppKind::all() {
        let config = GenConfig { streams: 4, keys: 3, ..Default::default() };
        dispatch(kind, &config, ModeAgreement { kind, pairs: 20 });
    }
    within(Duration::from_secs(60), start, "mode agreement");
    pass(4, "4 apps x 20 (input, plan) pairs: identical output multisets in both modes");
}

// ---------------------------------------------------------------------------
// Criterion 5: the optimizer reproduces the reference two-key layout.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_optimizer_reference_layout() {
    let itag = |ctor: &str, key: u32, stream: u32| ImplTag::new(Tag::new(ctor, key), stream);
    let mut entries = std::collections::BTreeMap::new();
    let mut add = |t: ImplTag, rate: f64, loc: &str| {
        entries.insert(t, RateEntry { rate, location: loc.into() });
    };
    add(itag("r", 1, 0), 15.0, "E1");
    add(itag("i", 1, 1), 100.0, "E1");
    add(itag("r", 2, 2), 10.0, "E0");
    add(itag("i", 2, 3), 200.0, "E2");
    add(itag("i", 2, 4), 300.0, "E3");
    let rates = RateSpec { entries };

    let program = apps::key_counter_program(&[1, 2]);
    let plan = optimize_plan(&program, &rates).unwrap();
    assert_eq!(validate_plan(&program, &plan, &rates.itags()), vec![]);

    // Root splits by key: one child owns all of key 1 as a leaf at E1; the
    // other owns r(2) at E0 and fans the two i(2) streams out to leaves at
    // E2 and E3. Matched structurally, ignoring worker ids and child order.
    let root = plan.node(plan.roots[0]);
    assert!(root.itags.is_empty(), "root owns nothing");
    assert_eq!(root.children.len(), 2);
    let key1 = plan
        .workers
        .iter()
        .find(|w| w.itags == [itag("r", 1, 0), itag("i", 1, 1)].into())
        .expect("one worker owns all of key 1");
    assert!(key1.children.is_empty());
    assert_eq!(key1.location, "E1");
    let key2 = plan
        .workers
        .iter()
        .find(|w| w.itags == [itag("r", 2, 2)].into())
        .expect("one worker owns r(2)");
    assert_eq!(key2.location, "E0");
    assert_eq!(key2.children.len(), 2);
    assert!(root.children.contains(&key1.id) && root.children.contains(&key2.id));
    let leaves: BTreeSet<(BTreeSet<ImplTag>, String)> = key2
        .children
        .iter()
        .map(|&c| {
            let n = plan.node(c);
            assert!(n.children.is_empty());
            (n.itags.clone(), n.location.clone())
        })
        .collect();
    assert_eq!(
        leaves,
        [
            ([itag("i", 2, 3)].into(), "E2".to_string()),
            ([itag("i", 2, 4)].into(), "E3".to_string()),
        ]
        .into()
    );
    pass(5, "reference rates reproduce the two-key plan layout and placements");
}

// ---------------------------------------------------------------------------
// Criterion 7: synchronizing events stay rare and stay at the root.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_synchronization_economy() {
    let program = apps::value_barrier_program(4);
    let config = GenConfig {
        streams: 4,
        events: 40_000,
        sync_ratio: 10_000,
        heartbeat_period: 500,
        keys: 2,
        seed: 77,
    };
    let streams = apps::generate(AppKind::ValueBarrier, &config);
    let barriers = streams[4].iter().filter(|m| m.is_event()).count() as u64;
    assert_eq!(barriers, 4);

    let rates = rates_from_streams(&streams);
    let plan = optimize_plan(&program, &rates).unwrap();
    let outcome = run_plan(&program, &plan, &streams, &RunOptions::simulated(7)).unwrap();

    let root = plan.roots[0];
    assert_eq!(
        outcome.stats.per_worker[root.0].joins, barriers,
        "root joins once per barrier"
    );
    let mut leaf_events = 0u64;
    for w in &plan.workers {
        if w.children.is_empty() {
            assert_eq!(outcome.stats.per_worker[w.id.0].joins, 0, "{} joined", w.id);
            leaf_events += outcome.stats.per_worker[w.id.0].events_processed;
        }
    }
    let fraction = leaf_events as f64 / outcome.stats.total_events as f64;
    assert!(
        fraction > 0.99,
        "only {:.4}% of events processed at leaves",
        fraction * 100.0
    );
    pass(
        7,
        "root joins = barrier count, leaves never join, >99% of events processed at leaves",
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: checkpoints equal sequential prefix folds.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_checkpoint_soundness() {
    for seed in 0..4u64 {
        let program = apps::value_barrier_program(3);
        let config = GenConfig {
            streams: 3,
            events: 240 + seed * 200,
            sync_ratio: 40,
            heartbeat_period: 7,
            keys: 2,
            seed,
        };
        let streams = apps::generate(AppKind::ValueBarrier, &config);
        let total: usize = streams.iter().map(Vec::len).sum();
        assert!(total <= 1_000);
        let rates = rates_from_streams(&streams);
        let plan = optimize_plan(&program, &rates).unwrap();
        let options = RunOptions {
            mode: Mode::Simulated { seed: seed * 3 + 1 },
            checkpoints: Some(Arc::new(|_| true)),
            ..Default::default()
        };
        let outcome = run_plan(&program, &plan, &streams, &options).unwrap();
        let barriers = streams
            .last()
            .unwrap()
            .iter()
            .filter(|m| m.is_event())
            .count();
        assert_eq!(outcome.checkpoints.len(), barriers);

        let input = sort_streams(&streams).unwrap();
        for record in &outcome.checkpoints {
            let prefix: Vec<_> = input
                .iter()
                .filter(|e| e.okey() <= record.o_value)
                .cloned()
                .collect();
            let (state, _) = program.sequential_fold(&prefix).unwrap();
            assert_eq!(
                record.state,
                serde_json::to_value(state).unwrap(),
                "seed {seed}: checkpoint at {} diverges from the prefix fold",
                record.o_value
            );
        }
    }
    pass(8, "every root-join checkpoint equals the sequential fold at its position");
}

// ---------------------------------------------------------------------------
// Criterion 9: throughput trend across worker counts (needs >= 4 cores).
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_throughput_scaling() {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if cores < 4 {
        skip(
            9,
            &format!(
                "throughput trend needs a >=4-core machine, found {cores} core(s); \
                 run `depstream bench --app value-barrier --workers 1,2,4 \
                 --events 1000000 --sync-ratio 10000` on capable hardware"
            ),
        );
        return;
    }
    let rows = depstream::runtime::bench::run_bench(
        AppKind::ValueBarrier,
        &[1, 2, 4],
        1_000_000,
        10_000,
        100,
        5,
    )
    .unwrap();
    for pair in rows.windows(2) {
        assert!(
            pair[1].events_per_sec > pair[0].events_per_sec,
            "throughput did not increase from {} to {} workers ({:.0} -> {:.0} events/s)",
            pair[0].workers,
            pair[1].workers,
            pair[0].events_per_sec,
            pair[1].events_per_sec,
        );
    }
    pass(9, "events/s strictly increases from 1 to 4 workers in concurrent mode");
}

// ---------------------------------------------------------------------------
// Criterion 10: heartbeats are exactly what liveness needs.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_heartbeat_liveness() {
    let program = apps::value_barrier_program(2);
    let a = |s| Tag::new("a", s);
    let b = Tag::bare("b");
    // Two value streams with events, a declared barrier stream that stays
    // silent. Without heartbeats the values can never be released.
    let streams = vec![
        vec![
            event(a(0), 0, 1, Value::Int(3)),
            event(a(0), 0, 4, Value::Int(4)),
        ],
        vec![
            event(a(1), 1, 2, Value::Int(5)),
            event(a(1), 1, 5, Value::Int(6)),
        ],
        Vec::<Message>::new(),
    ];
    let mut rates = rates_from_streams(&streams);
    rates.entries.insert(
        ImplTag::new(b, 2),
        RateEntry { rate: 1.0, location: "s2".into() },
    );
    let plan: SyncPlan = optimize_plan(&program, &rates).unwrap();
    let options = RunOptions {
        mode: Mode::Simulated { seed: 0 },
        validate_input: false,
        ..Default::default()
    };
    let err = run_plan(&program, &plan, &streams, &options).unwrap_err();
    assert!(matches!(err, RuntimeError::Deadlock(_)), "expected a deadlock, got {err}");

    for period in [1u64, 7, 100] {
        let healed = inject_heartbeats(&streams, period);
        let outcome = run_plan(&program, &plan, &healed, &options)
            .unwrap_or_else(|e| panic!("period {period}: {e}"));
        assert_eq!(outcome.stats.total_events, 4);
        assert!(outcome.outputs.is_empty());
    }
    pass(10, "silent stream deadlocks without heartbeats; any period >= 1 restores liveness");
}

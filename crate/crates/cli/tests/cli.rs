//! CLI smoke tests: every subcommand runs end to end, structured errors use
//! the documented exit codes, and identical configurations produce identical
//! artifacts.

use std::path::Path;
use std::process::{Command, Output};

fn depstream(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depstream"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str], dir: &Path) -> String {
    let out = depstream(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 output")
}

#[test]
fn gen_run_plan_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(
        &[
            "gen", "--app", "value-barrier", "--streams", "2", "--events", "200",
            "--sync-ratio", "40", "--heartbeat-period", "10", "--seed", "3",
            "--out", "trace.jsonl",
        ],
        d,
    );
    run_ok(
        &[
            "plan", "--app", "value-barrier", "--trace", "trace.jsonl",
            "--out", "plan.json", "--dot", "plan.dot",
        ],
        d,
    );
    assert!(d.join("plan.dot").exists());
    run_ok(
        &[
            "run", "--app", "value-barrier", "--trace", "trace.jsonl",
            "--plan-file", "plan.json", "--mode", "simulated", "--seed", "4",
            "--checkpoints", "--out", "result",
        ],
        d,
    );
    let outputs = std::fs::read_to_string(d.join("result/outputs.jsonl")).unwrap();
    assert_eq!(outputs.lines().count(), 5, "five barriers, five sums");
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("result/stats.json")).unwrap())
            .unwrap();
    assert_eq!(stats["total_events"], 205);
    let checkpoints =
        std::fs::read_to_string(d.join("result/checkpoints.jsonl")).unwrap();
    assert_eq!(checkpoints.lines().count(), 5);
}

#[test]
fn identical_simulated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = [
        "gen", "--app", "fraud", "--streams", "3", "--events", "300",
        "--sync-ratio", "30", "--heartbeat-period", "7", "--seed", "11",
        "--out", "t.jsonl",
    ];
    run_ok(&gen, d);
    let a = run_ok(
        &["run", "--app", "fraud", "--trace", "t.jsonl", "--seed", "5"],
        d,
    );
    let b = run_ok(
        &["run", "--app", "fraud", "--trace", "t.jsonl", "--seed", "5"],
        d,
    );
    assert_eq!(a, b);
    // Regenerating the trace with the same seed is byte-identical too.
    let before = std::fs::read(d.join("t.jsonl")).unwrap();
    run_ok(&gen, d);
    assert_eq!(before, std::fs::read(d.join("t.jsonl")).unwrap());
}

#[test]
fn check_passes_clean_apps_and_flags_broken_ones() {
    let dir = tempfile::tempdir().unwrap();
    for app in ["key-counter", "value-barrier", "page-view", "fraud"] {
        let ok = depstream(&["check", "--app", app, "--cases", "150", "--seed", "2"], dir.path());
        assert!(ok.status.success(), "{app} failed the consistency suite");
        let bad = depstream(
            &["check", "--app", app, "--cases", "800", "--seed", "2", "--mutated"],
            dir.path(),
        );
        assert_eq!(bad.status.code(), Some(2), "{app}: broken variant not flagged");
    }
}

#[test]
fn exit_codes_are_structured() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // Unreadable trace: validation failure.
    let out = depstream(
        &["run", "--app", "fraud", "--trace", "missing.jsonl"],
        d,
    );
    assert_eq!(out.status.code(), Some(1));

    // Malformed trace line: validation failure, no panic.
    std::fs::write(d.join("bad.jsonl"), "{\"stream\": \"zero\"}\n").unwrap();
    let out = depstream(&["run", "--app", "fraud", "--trace", "bad.jsonl"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // Progress-violating trace: rejected by validation by default...
    std::fs::write(
        d.join("silent.jsonl"),
        concat!(
            "{\"stream\":0,\"tag\":\"a(0)\",\"ts\":1,\"payload\":4}\n",
            "{\"stream\":1,\"tag\":\"b\",\"ts\":2,\"payload\":{}}\n",
            "{\"stream\":1,\"tag\":\"b\",\"ts\":9,\"payload\":null}\n",
        ),
    )
    .unwrap();
    let out = depstream(
        &["run", "--app", "value-barrier", "--trace", "silent.jsonl"],
        d,
    );
    assert_eq!(out.status.code(), Some(1));

    // ...and deadlocks in simulated mode when validation is skipped.
    let out = depstream(
        &[
            "run", "--app", "value-barrier", "--trace", "silent.jsonl",
            "--no-validate-input",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(3));

    // Malformed plan file.
    std::fs::write(d.join("plan.json"), "{\"workers\": 7}").unwrap();
    let out = depstream(
        &["run", "--app", "fraud", "--plan-file", "plan.json", "--events", "10"],
        d,
    );
    assert_eq!(out.status.code(), Some(1));

    // Zero-valued knobs are validation failures.
    let out = depstream(&["run", "--app", "fraud", "--events", "0"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_emits_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let csv = run_ok(
        &[
            "bench", "--app", "fraud", "--workers", "1,2", "--events", "4000",
            "--sync-ratio", "500", "--heartbeat-period", "50",
        ],
        dir.path(),
    );
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "workers,events,seconds,events_per_sec,p10_us,p50_us,p90_us,root_joins,leaf_events"
    );
    assert_eq!(lines.count(), 2);
}

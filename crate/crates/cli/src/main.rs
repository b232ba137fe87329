//! Command-line front end: trace generation, consistency checking, plan
//! synthesis, plan execution, and benchmarking.
//!
//! Exit codes: 0 success, 1 validation failure (bad configs, traces, plans,
//! or inputs), 2 consistency/property failure, 3 runtime deadlock.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use depstream::apps::{
    self, dispatch_dims, AppDims, AppHarness, AppKind, AppState, AppVisitor, GenConfig,
};
use depstream::consistency::run_consistency_suite;
use depstream::model::{
    collect_event_itags, read_trace, validate_input_instance, write_trace, Message,
};
use depstream::optimizer::{
    optimize_plan, plan_to_dot, rates_from_json, rates_from_streams, RateSpec,
};
use depstream::plan::{plan_from_json, plan_to_json, single_worker_plan, SyncPlan};
use depstream::runtime::{
    bench, run_plan, Mode, RunOptions, RunOutcome, RuntimeError,
};

#[derive(Parser)]
#[command(name = "depstream", version, about = "Dependency-guided stream processing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic input trace (JSONL).
    Gen(GenArgs),
    /// Run the consistency suite for an application program.
    Check(CheckArgs),
    /// Synthesize a synchronization plan from rate estimates.
    Plan(PlanArgs),
    /// Execute a plan over a trace and collect outputs.
    Run(RunArgs),
    /// Measure throughput across worker counts (concurrent mode).
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct WorkloadArgs {
    /// Application program: key-counter, value-barrier, page-view, fraud.
    #[arg(long)]
    app: AppKind,
    /// Number of parallel (value/view/increment) streams.
    #[arg(long, default_value_t = 2)]
    streams: u32,
    /// Total number of parallelizable events to generate.
    #[arg(long, default_value_t = 1000)]
    events: u64,
    /// Parallelizable events per synchronizing event.
    #[arg(long, default_value_t = 10_000)]
    sync_ratio: u64,
    /// Heartbeat period in ticks.
    #[arg(long, default_value_t = 100)]
    heartbeat_period: u64,
    /// Distinct keys (key-counter) or pages (page-view).
    #[arg(long, default_value_t = 2)]
    keys: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl WorkloadArgs {
    fn config(&self) -> Result<GenConfig, CliError> {
        for (name, v) in [
            ("--streams", self.streams as u64),
            ("--events", self.events),
            ("--sync-ratio", self.sync_ratio),
            ("--heartbeat-period", self.heartbeat_period),
            ("--keys", self.keys as u64),
        ] {
            if v == 0 {
                return Err(CliError::Validation(format!("{name} must be positive")));
            }
        }
        Ok(GenConfig {
            streams: self.streams,
            events: self.events,
            sync_ratio: self.sync_ratio,
            heartbeat_period: self.heartbeat_period,
            keys: self.keys,
            seed: self.seed,
        })
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Trace output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    app: AppKind,
    /// Randomized cases per condition per binding combination.
    #[arg(long, default_value_t = 1000)]
    cases: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    streams: u32,
    #[arg(long, default_value_t = 2)]
    keys: u32,
    /// Check the app's deliberately broken variant instead (self-test knob:
    /// the suite must catch it).
    #[arg(long, hide = true)]
    mutated: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    app: AppKind,
    /// Rates/locations file (JSON: {"itags":[{"tag","stream","rate","location"}]}).
    #[arg(long)]
    rates: Option<PathBuf>,
    /// Derive rates from this trace instead of a rates file.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Plan JSON output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Graphviz output path for the worker tree.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Simulated,
    Concurrent,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanSource {
    /// Synthesize with the communication optimizer from observed rates.
    Auto,
    /// One worker owning every implementation tag.
    SingleWorker,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Input trace (JSONL); generated from the workload flags when omitted.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Execution mode.
    #[arg(long, value_enum, default_value_t = ModeArg::Simulated)]
    mode: ModeArg,
    /// Plan selection when no plan file is given.
    #[arg(long, value_enum, default_value_t = PlanSource::Auto)]
    plan: PlanSource,
    /// Execute this plan file instead of synthesizing one.
    #[arg(long)]
    plan_file: Option<PathBuf>,
    /// Output directory for outputs.jsonl, stats.json and checkpoints.jsonl;
    /// outputs go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record a checkpoint at every root join.
    #[arg(long)]
    checkpoints: bool,
    /// Skip input-instance validation (to observe deadlocks on malformed
    /// traces in simulated mode).
    #[arg(long)]
    no_validate_input: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "value-barrier")]
    app: AppKind,
    /// Comma-separated worker (value-stream) counts.
    #[arg(long, default_value = "1,2,4", value_delimiter = ',')]
    workers: Vec<u32>,
    #[arg(long, default_value_t = 1_000_000)]
    events: u64,
    #[arg(long, default_value_t = 10_000)]
    sync_ratio: u64,
    #[arg(long, default_value_t = 100)]
    heartbeat_period: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Validation(String),
    Consistency(String),
    Deadlock(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Consistency(_) => 2,
            CliError::Deadlock(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Consistency(m) | CliError::Deadlock(m) => m,
        }
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Deadlock(m) => CliError::Deadlock(format!("deadlock: {m}")),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe closes instead of panicking.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Check(args) => cmd_check(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn write_out(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, contents)
            .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let config = args.workload.config()?;
    let streams = apps::generate(args.workload.app, &config);
    debug_assert!(validate_input_instance(&streams).is_empty());
    write_out(args.out.as_deref(), &write_trace(&streams))
}

struct CheckVisitor {
    cases: u64,
    seed: u64,
    mutated: bool,
}

impl AppVisitor for CheckVisitor {
    type Out = Result<(), CliError>;

    fn visit<S: AppState>(self, harness: AppHarness<S>) -> Self::Out {
        let program =
            if self.mutated { &harness.mutated_program } else { &harness.program };
        let report = run_consistency_suite(&harness, program, self.cases, self.seed)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        println!("{json}");
        if report.passed() {
            Ok(())
        } else {
            Err(CliError::Consistency(format!(
                "{} consistency failure(s)",
                report.failure_count()
            )))
        }
    }
}

fn cmd_check(args: CheckArgs) -> Result<(), CliError> {
    let dims = AppDims {
        streams: args.streams.max(1),
        keys: (0..args.keys.max(1)).collect(),
    };
    dispatch_dims(
        args.app,
        &dims,
        CheckVisitor { cases: args.cases, seed: args.seed, mutated: args.mutated },
    )
}

struct PlanVisitor {
    rates: RateSpec,
    out: Option<PathBuf>,
    dot: Option<PathBuf>,
}

impl AppVisitor for PlanVisitor {
    type Out = Result<(), CliError>;

    fn visit<S: AppState>(self, harness: AppHarness<S>) -> Self::Out {
        for itag in self.rates.itags() {
            if !harness.program.alphabet.contains(&itag.tag) {
                return Err(CliError::Validation(format!(
                    "rates file names tag {} outside the program alphabet",
                    itag.tag
                )));
            }
        }
        let plan = optimize_plan(&harness.program, &self.rates)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let json = serde_json::to_string_pretty(&plan_to_json(&harness.program, &plan))
            .expect("plan serializes");
        if let Some(dot) = &self.dot {
            fs::write(dot, plan_to_dot(&plan)).map_err(|e| {
                CliError::Validation(format!("cannot write {}: {e}", dot.display()))
            })?;
        }
        write_out(self.out.as_deref(), &(json + "\n"))
    }
}

fn cmd_plan(args: PlanArgs) -> Result<(), CliError> {
    let rates = match (&args.rates, &args.trace) {
        (Some(path), _) => {
            let json: serde_json::Value = serde_json::from_str(&read_file(path)?)
                .map_err(|e| CliError::Validation(format!("malformed rates file: {e}")))?;
            rates_from_json(&json).map_err(CliError::Validation)?
        }
        (None, Some(path)) => {
            let streams = read_trace(&read_file(path)?)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            rates_from_streams(&streams)
        }
        (None, None) => {
            return Err(CliError::Validation(
                "plan needs --rates or --trace to estimate input rates".into(),
            ))
        }
    };
    let dims = AppDims::from_itags(args.app, &rates.itags());
    dispatch_dims(args.app, &dims, PlanVisitor { rates, out: args.out, dot: args.dot })
}

struct RunVisitor {
    streams: Vec<Vec<Message>>,
    mode: ModeArg,
    seed: u64,
    plan: PlanSource,
    plan_file: Option<PathBuf>,
    out: Option<PathBuf>,
    checkpoints: bool,
    validate_input: bool,
}

impl AppVisitor for RunVisitor {
    type Out = Result<(), CliError>;

    fn visit<S: AppState>(self, harness: AppHarness<S>) -> Self::Out {
        let itags = collect_event_itags(&self.streams);
        let plan: SyncPlan = match &self.plan_file {
            Some(path) => {
                let json: serde_json::Value = serde_json::from_str(&read_file(path)?)
                    .map_err(|e| {
                        CliError::Validation(format!("malformed plan file: {e}"))
                    })?;
                plan_from_json(&harness.program, &json)
                    .map_err(|e| CliError::Validation(e.to_string()))?
            }
            None => match self.plan {
                PlanSource::Auto => {
                    let rates = rates_from_streams(&self.streams);
                    optimize_plan(&harness.program, &rates)
                        .map_err(|e| CliError::Validation(e.to_string()))?
                }
                PlanSource::SingleWorker => single_worker_plan(&itags),
            },
        };
        let options = RunOptions {
            mode: match self.mode {
                ModeArg::Simulated => Mode::Simulated { seed: self.seed },
                ModeArg::Concurrent => Mode::Concurrent,
            },
            checkpoints: self.checkpoints.then(|| {
                Arc::new(|_: &depstream::model::Event| true) as _
            }),
            validate_input: self.validate_input,
            ..Default::default()
        };
        let outcome = run_plan(&harness.program, &plan, &self.streams, &options)?;
        report_run(&outcome, self.out.as_deref(), self.checkpoints)
    }
}

fn report_run(
    outcome: &RunOutcome,
    out: Option<&Path>,
    checkpoints: bool,
) -> Result<(), CliError> {
    let mut outputs = String::new();
    for o in &outcome.outputs {
        outputs.push_str(&serde_json::to_string(o).expect("output serializes"));
        outputs.push('\n');
    }
    let stats = serde_json::to_string_pretty(&outcome.stats).expect("stats serialize");
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| {
                CliError::Validation(format!("cannot create {}: {e}", dir.display()))
            })?;
            fs::write(dir.join("outputs.jsonl"), outputs).map_err(io_err)?;
            fs::write(dir.join("stats.json"), stats).map_err(io_err)?;
            if checkpoints {
                let mut lines = String::new();
                for c in &outcome.checkpoints {
                    lines.push_str(
                        &serde_json::to_string(c).expect("checkpoint serializes"),
                    );
                    lines.push('\n');
                }
                fs::write(dir.join("checkpoints.jsonl"), lines).map_err(io_err)?;
            }
            Ok(())
        }
        None => {
            print!("{outputs}");
            eprintln!("{stats}");
            Ok(())
        }
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Validation(e.to_string())
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let config = args.workload.config()?;
    let (streams, dims) = match &args.trace {
        Some(path) => {
            let streams = read_trace(&read_file(path)?)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let dims = AppDims::from_itags(args.workload.app, &collect_event_itags(&streams));
            (streams, dims)
        }
        None => (
            apps::generate(args.workload.app, &config),
            AppDims::from_config(&config),
        ),
    };
    dispatch_dims(
        args.workload.app,
        &dims,
        RunVisitor {
            streams,
            mode: args.mode,
            seed: args.workload.seed,
            plan: args.plan,
            plan_file: args.plan_file,
            out: args.out,
            checkpoints: args.checkpoints,
            validate_input: !args.no_validate_input,
        },
    )
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    if args.workers.is_empty() || args.workers.contains(&0) {
        return Err(CliError::Validation("--workers needs positive counts".into()));
    }
    let rows = bench::run_bench(
        args.app,
        &args.workers,
        args.events,
        args.sync_ratio,
        args.heartbeat_period,
        args.seed,
    )?;
    let mut csv = String::from(bench::csv_header());
    csv.push('\n');
    for row in &rows {
        csv.push_str(&bench::csv_row(row));
        csv.push('\n');
    }
    write_out(args.out.as_deref(), &csv)
}

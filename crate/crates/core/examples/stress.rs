//! Randomized soak test: run every app over many generated inputs and
//! random plans in both modes, checking each run against the sequential
//! fold and validating release logs. Useful for hunting rare interleavings
//! with budgets beyond what the test suites spend.
//!
//!     cargo run --release --example stress

use depstream::apps::{self, AppHarness, AppKind, AppState, AppVisitor, GenConfig};
use depstream::model::{collect_event_itags, sort_streams};
use depstream::plan::{random_plan, validate_plan};
use depstream::runtime::{run_plan, verify_release_logs, Mode, RunOptions};

struct Stress { kind: AppKind, rounds: u64 }

impl AppVisitor for Stress {
    type Out = u64;
    fn visit<S: AppState>(self, h: AppHarness<S>) -> u64 {
        let mut runs = 0;
        for i in 0..self.rounds {
            let config = GenConfig {
                streams: 1 + (i % 5) as u32,
                events: 30 + (i * 37) % 700,
                sync_ratio: 1 + i % 40,
                heartbeat_period: 1 + i % 17,
                keys: 1 + (i % 4) as u32,
                seed: 0xC0FFEE + i,
            };
            let streams = apps::generate(self.kind, &config);
            let input = sort_streams(&streams).unwrap();
            let mut expected = h.program.sequential_spec(&input).unwrap();
            expected.sort();
            let itags = collect_event_itags(&streams);
            for j in 0..6 {
                let plan = random_plan(&h.program, &itags, 4, i * 31 + j);
                assert_eq!(validate_plan(&h.program, &plan, &itags), vec![]);
                let options = RunOptions {
                    mode: if (i + j) % 4 == 0 {
                        Mode::Concurrent
                    } else {
                        Mode::Simulated { seed: i * 131 + j }
                    },
                    capture_release_logs: true,
                    ..Default::default()
                };
                let out = run_plan(&h.program, &plan, &streams, &options)
                    .unwrap_or_else(|e| panic!("{} round {i} plan {j}: {e}", self.kind));
                let mut got = out.outputs;
                got.sort();
                assert_eq!(got, expected, "{} round {i} plan {j}", self.kind);
                verify_release_logs(&h.program, &plan, &streams, out.release_logs.as_ref().unwrap())
                    .unwrap_or_else(|e| panic!("{} round {i} plan {j}: {e}", self.kind));
                runs += 1;
            }
        }
        runs
    }
}

fn main() {
    let mut total = 0;
    for kind in AppKind::all() {
        let config = GenConfig { streams: 5, keys: 4, ..Default::default() };
        total += apps::dispatch(kind, &config, Stress { kind, rounds: 120 });
        println!("{kind}: ok");
    }
    println!("{total} randomized runs, all equal to the sequential fold with valid logs");
}

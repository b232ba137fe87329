//! Synthetic input generation. Parallelizable events are spread round-robin
//! over `streams` parallel streams; synchronizing events (barriers, rules,
//! metadata updates, read-resets) arrive on a dedicated extra stream every
//! `sync_ratio` parallelizable events. Every tick is globally unique, so the
//! result is trivially monotone per stream, and heartbeat injection makes it
//! a valid input instance.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{event, Message, Value};
use crate::runtime::inject_heartbeats;

use super::{fraud, key_counter, page_view, value_barrier, AppKind};

#[derive(Debug, Clone)]
pub struct GenConfig {
    /// Number of parallel (value/view/increment) streams. The generated
    /// instance has one extra dedicated stream for synchronizing events.
    pub streams: u32,
    /// Total number of parallelizable events across all parallel streams.
    pub events: u64,
    /// Parallelizable events per synchronizing event.
    pub sync_ratio: u64,
    /// Heartbeat period in ticks; one terminal heartbeat is always added.
    pub heartbeat_period: u64,
    /// Distinct keys (key-counter) or pages (page-view).
    pub keys: u32,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            streams: 2,
            events: 1_000,
            sync_ratio: 10_000,
            heartbeat_period: 50,
            keys: 2,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn key_range(&self) -> Vec<u32> {
        (0..self.keys.max(1)).collect()
    }
}

pub fn generate_input(kind: AppKind, config: &GenConfig) -> Vec<Vec<Message>> {
    let k = config.streams.max(1);
    let keys = config.key_range();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut streams: Vec<Vec<Message>> = vec![Vec::new(); k as usize + 1];
    let sync_stream = k;
    let mut tick: u64 = 0;
    let mut sync_count: u64 = 0;

    for c in 0..config.events {
        let stream = (c % k as u64) as u32;
        tick += 1;
        let msg = match kind {
            AppKind::KeyCounter => {
                let key = keys[(c % keys.len() as u64) as usize];
                event(key_counter::inc_tag(key), stream, tick, Value::Unit)
            }
            AppKind::ValueBarrier => event(
                value_barrier::value_tag(stream),
                stream,
                tick,
                Value::Int(rng.gen_range(0..10_000)),
            ),
            AppKind::Fraud => event(
                fraud::transaction_tag(stream),
                stream,
                tick,
                Value::Int(rng.gen_range(0..10_000)),
            ),
            AppKind::PageView => {
                // Metadata reads arrive at 1/100 the view rate; views are
                // skewed onto the first two pages.
                if c % 100 == 99 {
                    let uid = keys[rng.gen_range(0..keys.len())];
                    event(page_view::get_tag(uid), stream, tick, Value::Unit)
                } else {
                    let hot = keys.len().min(2);
                    let uid = keys[rng.gen_range(0..hot)];
                    event(page_view::view_tag(uid), stream, tick, Value::Unit)
                }
            }
        };
        streams[stream as usize].push(msg);

        if (c + 1) % config.sync_ratio.max(1) == 0 {
            tick += 1;
            let msg = match kind {
                AppKind::KeyCounter => {
                    let key = keys[(sync_count % keys.len() as u64) as usize];
                    event(key_counter::read_reset_tag(key), sync_stream, tick, Value::Unit)
                }
                AppKind::ValueBarrier => {
                    event(value_barrier::barrier_tag(), sync_stream, tick, Value::Unit)
                }
                AppKind::Fraud => {
                    event(fraud::rule_tag(), sync_stream, tick, Value::Unit)
                }
                AppKind::PageView => {
                    let uid = keys[(sync_count % keys.len() as u64) as usize];
                    event(
                        page_view::update_tag(uid),
                        sync_stream,
                        tick,
                        Value::Int(rng.gen_range(1..100)),
                    )
                }
            };
            streams[sync_stream as usize].push(msg);
            sync_count += 1;
        }
    }

    inject_heartbeats(&streams, config.heartbeat_period.max(1))
}

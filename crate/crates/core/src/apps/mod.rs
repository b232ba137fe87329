//! The bundled example programs: key-counter map, value-barrier windowing,
//! page-view join, and fraud detection, each with input generators and the
//! randomized-state hooks the consistency suite needs.

pub(crate) mod fraud;
mod generate;
pub(crate) mod key_counter;
pub(crate) mod page_view;
pub(crate) mod value_barrier;

pub use fraud::{fraud_detection_program, FraudState};
pub use generate::{generate_input, GenConfig};
pub use key_counter::{key_counter_program, KeyCounterState};
pub use page_view::{page_view_program, PageViewState, NO_ZIPCODE};
pub use value_barrier::{value_barrier_program, ValueBarrierState};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::model::{ImplTag, Message, Tag, Value};
use crate::program::{DgsProgram, StateTypeId};

/// States usable by the framework: cloneable, comparable on a canonical
/// form, and serializable for checkpoints and failure witnesses.
pub trait AppState:
    Clone + fmt::Debug + PartialEq + serde::Serialize + Send + Sync + 'static
{
}

impl<T> AppState for T where
    T: Clone + fmt::Debug + PartialEq + serde::Serialize + Send + Sync + 'static
{
}

/// Random state generator for a given state type.
pub type StateGen<S> = Arc<dyn Fn(StateTypeId, &mut ChaCha8Rng) -> S + Send + Sync>;

/// Random payload generator for an event of a given tag.
pub type PayloadGen = Arc<dyn Fn(&Tag, &mut ChaCha8Rng) -> Value + Send + Sync>;

/// One registered application: the program plus generators for random
/// states, payloads, and input instances, and a deliberately broken variant
/// for mutation testing.
pub struct AppHarness<S> {
    pub program: DgsProgram<S>,
    /// A consistent-by-construction random state of the given type.
    pub gen_state: StateGen<S>,
    /// A random payload for an event of the given tag.
    pub gen_payload: PayloadGen,
    /// The same program with one fork or join deliberately broken; the
    /// consistency suite must be able to catch it.
    pub mutated_program: DgsProgram<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppKind {
    KeyCounter,
    ValueBarrier,
    PageView,
    Fraud,
}

impl AppKind {
    pub fn all() -> [AppKind; 4] {
        [AppKind::KeyCounter, AppKind::ValueBarrier, AppKind::PageView, AppKind::Fraud]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AppKind::KeyCounter => "key-counter",
            AppKind::ValueBarrier => "value-barrier",
            AppKind::PageView => "page-view",
            AppKind::Fraud => "fraud",
        }
    }
}

impl fmt::Display for AppKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown app `{0}`; expected one of key-counter, value-barrier, page-view, fraud")]
pub struct UnknownApp(String);

impl FromStr for AppKind {
    type Err = UnknownApp;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "key-counter" => Ok(AppKind::KeyCounter),
            "value-barrier" => Ok(AppKind::ValueBarrier),
            "page-view" => Ok(AppKind::PageView),
            "fraud" => Ok(AppKind::Fraud),
            other => Err(UnknownApp(other.to_string())),
        }
    }
}

/// Program dimensions: how many value streams and which keys the alphabet
/// must cover. Derived from a generator config or recovered from a trace.
#[derive(Debug, Clone)]
pub struct AppDims {
    pub streams: u32,
    pub keys: Vec<u32>,
}

impl AppDims {
    pub fn from_config(config: &GenConfig) -> Self {
        AppDims { streams: config.streams.max(1), keys: config.key_range() }
    }

    /// Recovers dimensions from the tags present in a trace: per-stream
    /// value tags `a(i)` size the stream count, keyed tags collect the key
    /// alphabet.
    pub fn from_itags(kind: AppKind, itags: &std::collections::BTreeSet<ImplTag>) -> Self {
        let mut streams = 1;
        let mut keys: std::collections::BTreeSet<u32> = Default::default();
        for itag in itags {
            match (kind, itag.tag.ctor.as_str(), itag.tag.key) {
                (AppKind::ValueBarrier | AppKind::Fraud, "a", Some(k)) => {
                    streams = streams.max(k + 1)
                }
                (AppKind::KeyCounter | AppKind::PageView, _, Some(k)) => {
                    keys.insert(k);
                }
                _ => {}
            }
        }
        if keys.is_empty() {
            keys.insert(0);
        }
        AppDims { streams, keys: keys.into_iter().collect() }
    }
}

/// Generic dispatch over the per-app state type. Callers implement the
/// visitor once and get monomorphized pipelines for every app.
pub trait AppVisitor {
    type Out;
    fn visit<S: AppState>(self, harness: AppHarness<S>) -> Self::Out;
}

/// Instantiates the harness for `kind` at the given dimensions and hands it
/// to the visitor.
pub fn dispatch_dims<V: AppVisitor>(kind: AppKind, dims: &AppDims, visitor: V) -> V::Out {
    match kind {
        AppKind::KeyCounter => visitor.visit(key_counter::harness(&dims.keys)),
        AppKind::ValueBarrier => visitor.visit(value_barrier::harness(dims.streams)),
        AppKind::PageView => visitor.visit(page_view::harness(&dims.keys)),
        AppKind::Fraud => visitor.visit(fraud::harness(dims.streams)),
    }
}

/// [`dispatch_dims`] sized from a generator config.
pub fn dispatch<V: AppVisitor>(kind: AppKind, config: &GenConfig, visitor: V) -> V::Out {
    dispatch_dims(kind, &AppDims::from_config(config), visitor)
}

/// The input streams an app's generator produces for a config. Every result
/// passes `validate_input_instance`.
pub fn generate(kind: AppKind, config: &GenConfig) -> Vec<Vec<Message>> {
    generate_input(kind, config)
}

//! Stream processing with dependency-guided synchronization.
//!
//! Programs are written as a sequential update plus a symmetric dependence
//! relation on event tags and a pair of fork/join state primitives. The
//! framework checks the consistency conditions that make such a program safe
//! to parallelize, generates and validates synchronization plans (binary
//! worker trees whose leaves run without blocking and whose internal nodes
//! join-update-fork on synchronizing events), and executes plans with
//! selective-reordering mailboxes driven by heartbeats, either as a
//! deterministic simulation or with one thread per worker.

pub mod apps;
pub mod consistency;
pub mod model;
pub mod optimizer;
pub mod plan;
pub mod program;
pub mod runtime;

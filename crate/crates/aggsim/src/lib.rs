//! Deterministic simulator for multi-agent energy aggregation.
//!
//! The crate solves quadratic-cost economic dispatch two ways — analytically
//! through an active-set oracle, and distributed through a synchronous
//! consensus protocol where agents trade price copies with their neighbors —
//! and studies how node-to-agent clustering granularity and scheduled
//! communication-link outages affect convergence.
//!
//! Modules:
//! - [`grid`]: feeder topology, node dataset, clustering into superagents,
//!   communication graph.
//! - [`dispatch`]: centralized optimum (the measurement reference) and an
//!   independent bisection solver used to test it.
//! - [`consensus`]: the synchronous-round price update with stale-cache
//!   semantics under link outages.
//! - [`disruption`]: timed link-outage schedules and islanding validation.
//! - [`scenario`], [`sweep`], [`metrics`], [`trace`]: the experiment
//!   harness: strict JSON scenarios, granularity sweeps, REL and
//!   affected-node metrics, CSV traces and summaries.

pub mod consensus;
pub mod dispatch;
pub mod disruption;
pub mod grid;
pub mod metrics;
pub mod scenario;
pub mod sweep;
pub mod trace;

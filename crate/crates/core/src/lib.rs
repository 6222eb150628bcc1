//! Cloud-edge surveillance video query engine.
//!
//! Frame-difference detection, camera profiling, an edge/cloud decision
//! rule, latency estimation, load-aware dispatch with adaptive thresholds,
//! and a deterministic discrete-event simulator that ties them together.

pub mod classify;
pub mod estimate;
pub mod profiling;
pub mod schedule;
pub mod sim;
pub mod vision;

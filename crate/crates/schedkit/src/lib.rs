//! Pluggable task-scheduling framework with a deterministic hybrid-cloud
//! simulation harness.
//!
//! User-defined scheduling algorithms attach to a scheduler context through a
//! fixed event/callback contract ([`algorithms::SchedulingAlgorithm`]). The
//! context owns the application store and the task lifecycle; a
//! discrete-event harness ([`sim::run_experiment`]) executes bag-of-tasks
//! workloads on simulated local and dynamically provisioned resource pools
//! under virtual time, producing a replayable event trace and a report.

pub mod algorithms;
pub mod config;
pub mod context;
pub mod dist;
pub mod error;
pub mod events;
pub mod model;
pub mod provisioning;
pub mod report;
pub mod sim;

pub use error::{Result, SchedulerError};

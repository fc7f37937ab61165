//! Deterministic discrete-event simulator for multi-tenant FPGA scheduling
//! with hardware preemption.
//!
//! The crate is organised bottom-up:
//!
//! * [`catalog`] holds the bundled 27-benchmark dataset and user catalog ingestion.
//! * [`fabric`] models slot partitions and smallest-fit placement.
//! * [`costmodel`] turns resource footprints into configuration frames and
//!   frames into save/restore time.
//! * [`contextstore`] captures job state into CRC-protected frames, allocates
//!   DRAM regions and seals images with AES-128-CTR + HMAC-SHA-256.
//! * [`policies`] are the scheduling decision functions.
//! * [`engine`] is the simulation core; [`report`] computes and renders metrics.
//! * [`verify`] is the save/reset/restore correctness harness.

pub mod catalog;
pub mod contextstore;
pub mod costmodel;
pub mod engine;
pub mod fabric;
pub mod policies;
pub mod report;
pub mod verify;

/// Simulated time in integer nanoseconds.
pub type Nanos = u64;

pub use catalog::{BenchmarkSpec, ResourceVector};
pub use engine::{run, ScenarioConfig, SimError, SimOutput};
pub use fabric::{FabricConfig, SlotId};
pub use report::SimReport;

use serde::{Deserialize, Serialize};
use std::fmt;

/// Identifier of a job instance within one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub u32);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

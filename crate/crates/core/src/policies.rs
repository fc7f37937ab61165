//! Scheduling policies. Each hook is a pure function of a snapshot taken by
//! the engine at a decision point.

use serde::{Deserialize, Serialize};

use crate::catalog::ResourceVector;
use crate::fabric::{self, FabricConfig, Occupancy, Slot, SlotId};
use crate::{JobId, Nanos};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Round robin; incomplete work is saved and later restored.
    #[serde(rename = "rr-preemptive")]
    RoundRobinPreemptive,
    /// Round robin without context saving: eviction discards all progress.
    #[serde(rename = "rr-evict-restart")]
    RoundRobinEvictRestart,
    #[serde(rename = "run-to-completion")]
    RunToCompletion,
    /// Strictly higher priority arrivals preempt running work.
    #[serde(rename = "priority-preemptive")]
    PriorityPreemptive,
}

impl PolicyKind {
    pub fn uses_quantum(self) -> bool {
        matches!(self, PolicyKind::RoundRobinPreemptive | PolicyKind::RoundRobinEvictRestart)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDescriptor {
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum_ns: Option<Nanos>,
}

impl PolicyDescriptor {
    pub fn new(kind: PolicyKind, quantum_ns: Option<Nanos>) -> Self {
        Self { kind, quantum_ns }
    }

    pub fn validate(&self) -> Result<(), String> {
        match (self.kind.uses_quantum(), self.quantum_ns) {
            (_, Some(0)) => Err("quantum_ns must be positive".into()),
            (true, None) => Err("round-robin policies require quantum_ns".into()),
            _ => Ok(()),
        }
    }

    /// Slice limit for one dispatch; `None` means run until done or preempted.
    pub fn slice_limit(&self) -> Option<Nanos> {
        if self.kind.uses_quantum() {
            self.quantum_ns
        } else {
            None
        }
    }
}

/// A queued job as seen by a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaitingJob {
    pub id: JobId,
    pub priority: i32,
    pub demand: ResourceVector,
    /// Slot holding this job's saved context, if any.
    pub pinned: Option<SlotId>,
}

impl WaitingJob {
    /// Whether this job may be placed into `slot` once it is free.
    pub fn eligible_for(&self, slot: &Slot) -> bool {
        match self.pinned {
            Some(p) => p == slot.id,
            None => fabric::fits(&self.demand, &slot.capacity),
        }
    }
}

/// A job currently executing in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunningJob {
    pub id: JobId,
    pub priority: i32,
    pub slot: SlotId,
    pub remaining_cycles: u64,
    pub service_cycles: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    ContinueRunning,
    /// Save the job running in `slot`, then hand the slot to `next`.
    PreemptAndDispatch { slot: SlotId, next: JobId },
    /// Throw away the progress of the job in `slot`; `next` gets the slot if any job waits.
    EvictRestartAndDispatch { slot: SlotId, next: Option<JobId> },
    DispatchToFreeSlot { job: JobId, slot: SlotId },
    Idle,
}

fn first_eligible(queue: &[WaitingJob], slot: &Slot) -> Option<JobId> {
    queue.iter().find(|w| w.eligible_for(slot)).map(|w| w.id)
}

/// Decision at a quantum boundary for the job running in `slot`.
pub fn on_quantum_expire(
    policy: &PolicyDescriptor,
    running: &RunningJob,
    queue: &[WaitingJob],
    fabric: &FabricConfig,
) -> Decision {
    let Some(slot) = fabric.slot(running.slot) else {
        return Decision::ContinueRunning;
    };
    match policy.kind {
        PolicyKind::RoundRobinPreemptive => {
            if running.remaining_cycles == 0 {
                return Decision::ContinueRunning;
            }
            match first_eligible(queue, slot) {
                Some(next) => Decision::PreemptAndDispatch { slot: slot.id, next },
                None => Decision::ContinueRunning,
            }
        }
        PolicyKind::RoundRobinEvictRestart => {
            Decision::EvictRestartAndDispatch { slot: slot.id, next: first_eligible(queue, slot) }
        }
        PolicyKind::RunToCompletion | PolicyKind::PriorityPreemptive => Decision::ContinueRunning,
    }
}

/// Queue in service order: FIFO, or by descending priority (FIFO among equals).
pub fn service_order(policy: &PolicyDescriptor, queue: &[WaitingJob]) -> Vec<WaitingJob> {
    let mut ordered = queue.to_vec();
    if policy.kind == PolicyKind::PriorityPreemptive {
        ordered.sort_by_key(|w| std::cmp::Reverse(w.priority));
    }
    ordered
}

/// Picks the next placement when at least one slot is free.
pub fn on_slot_free(
    policy: &PolicyDescriptor,
    queue: &[WaitingJob],
    fabric: &FabricConfig,
    occupancy: &Occupancy,
) -> Decision {
    for job in service_order(policy, queue) {
        let slot = match job.pinned {
            Some(pinned) => occupancy.is_free(pinned).then_some(pinned),
            None => fabric::smallest_fit(&job.demand, fabric, occupancy),
        };
        if let Some(slot) = slot {
            return Decision::DispatchToFreeSlot { job: job.id, slot };
        }
    }
    Decision::Idle
}

/// Decision when `arriving` is waiting for a slot and `running` lists the
/// executing jobs.
pub fn on_arrival(
    policy: &PolicyDescriptor,
    arriving: &WaitingJob,
    running: &[RunningJob],
    fabric: &FabricConfig,
) -> Decision {
    if policy.kind != PolicyKind::PriorityPreemptive {
        return Decision::ContinueRunning;
    }
    running
        .iter()
        .filter(|r| r.priority < arriving.priority && r.remaining_cycles < r.service_cycles)
        .filter(|r| fabric.slot(r.slot).is_some_and(|s| arriving.eligible_for(s)))
        .min_by_key(|r| (r.priority, fabric::slot_rank(fabric, r.slot)))
        .map_or(Decision::ContinueRunning, |victim| Decision::PreemptAndDispatch {
            slot: victim.slot,
            next: arriving.id,
        })
}

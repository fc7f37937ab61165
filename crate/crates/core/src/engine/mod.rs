//! Discrete-event simulation of jobs sharing the slots of a fabric.
//!
//! Time only moves forward to the next arrival or the end of a slot phase
//! (restore, run slice, save, reset). Everything that happens at one instant
//! is settled before time moves again: arrivals first, then phase ends in slot
//! order, then dispatch and preemption decisions until nothing changes.

mod scenario;
mod sweep;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{self, BenchmarkSpec, ResourceVector};
use crate::contextstore::{self, ContextError, ContextStore, MemoryRegion, RuntimeState, SealedContext};
use crate::costmodel::{restore_cost, save_cost, Clock};
use crate::fabric::{FabricError, Occupancy, SlotId};
use crate::policies::{self, Decision, PolicyKind, RunningJob, WaitingJob};
use crate::report::{self, SimReport};
use crate::verify::kernel_jump;
use crate::{JobId, Nanos};

pub use scenario::{ConfigError, FramePolicySpec, JobSpec, JobTemplate, Scenario, ScenarioConfig, StarvationRule};
pub use sweep::{sweep, SweepRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Arrive,
    Dispatch,
    QuantumExpire,
    Save,
    Reset,
    Restore,
    Complete,
    Starve,
}

/// One timeline entry. Events are ordered by their position in the timeline,
/// which is also non-decreasing in `at_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEvent {
    pub at_ns: Nanos,
    pub kind: EventKind,
    pub job: JobId,
    pub slot: Option<SlotId>,
    /// Slot time the event occupies: the executed slice for `Dispatch`, the
    /// transfer or reset time for `Save`/`Restore`/`Reset`, zero otherwise.
    pub duration_ns: Nanos,
}

impl ScheduleEvent {
    pub fn end_ns(&self) -> Nanos {
        self.at_ns + self.duration_ns
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobState {
    Pending,
    Waiting,
    Running,
    Preempted,
    Completed,
    Starved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub id: JobId,
    pub benchmark: String,
    pub demand: ResourceVector,
    pub service_cycles: u64,
    pub remaining_cycles: u64,
    pub clock: Clock,
    pub priority: i32,
    pub arrival_ns: Nanos,
    pub frames: u32,
    pub state: JobState,
    pub slot: Option<SlotId>,
    pub context: Option<SealedContext>,
    pub region: Option<MemoryRegion>,
    pub switches: u32,
    pub evictions: u32,
    /// Value the verification kernel starts from.
    pub kernel_seed: u64,
    pub kernel_state: u64,
    pub finished_at: Option<Nanos>,
    kernel_attached: bool,
}

impl Job {
    pub fn from_spec(spec: &JobSpec, kernel_seed: u64, kernel_attached: bool) -> Self {
        Self {
            id: spec.id,
            benchmark: spec.benchmark.clone(),
            demand: spec.demand,
            service_cycles: spec.service_cycles,
            remaining_cycles: spec.service_cycles,
            clock: spec.clock,
            priority: spec.priority,
            arrival_ns: spec.arrival_ns,
            frames: spec.frames,
            state: JobState::Pending,
            slot: None,
            context: None,
            region: None,
            switches: 0,
            evictions: 0,
            kernel_seed,
            kernel_state: kernel_seed,
            finished_at: None,
            kernel_attached,
        }
    }

    fn done_cycles(&self) -> u64 {
        self.service_cycles - self.remaining_cycles
    }

    /// Cycles and nanoseconds the job would execute in a slice of `slice_ns`.
    /// Time is measured on the job's own cycle grid, so slice lengths add up
    /// exactly to the service time.
    pub fn peek(&self, slice_ns: Nanos) -> (u64, Nanos) {
        let done = self.done_cycles();
        let start = self.clock.cycles_to_ns(done);
        let left = self.clock.cycles_to_ns(self.service_cycles) - start;
        if slice_ns >= left {
            return (self.remaining_cycles, left);
        }
        let reachable = self.clock.cycles_within(start + slice_ns).saturating_sub(done);
        let cycles = reachable.min(self.remaining_cycles);
        (cycles, self.clock.cycles_to_ns(done + cycles) - start)
    }

    /// Executes up to `slice_ns` of work and returns the time consumed.
    pub fn advance(&mut self, slice_ns: Nanos) -> Nanos {
        let (cycles, consumed) = self.peek(slice_ns);
        self.remaining_cycles -= cycles;
        if self.kernel_attached {
            self.kernel_state = kernel_jump(self.kernel_state, cycles);
        }
        if self.remaining_cycles == 0 {
            self.state = JobState::Completed;
        }
        consumed
    }

    fn waiting_view(&self) -> WaitingJob {
        let pinned = if self.state == JobState::Preempted { self.slot } else { None };
        WaitingJob { id: self.id, priority: self.priority, demand: self.demand, pinned }
    }
}

/// Whether an evict-restart job has lost its progress often enough to never finish.
pub fn detect_starvation(job: &Job, rule: &StarvationRule) -> bool {
    job.evictions >= rule.zero_progress_evictions && job.remaining_cycles == job.service_cycles
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("job {job}: {source}")]
    Context { job: JobId, source: ContextError },
    #[error("job {job}: restored context does not match the saved job")]
    ContextMismatch { job: JobId },
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

/// Flips one bit of a job's sealed context right after it is saved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TamperHook {
    pub job: JobId,
    pub bit: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub tamper: Option<TamperHook>,
    /// Byte budget for saved contexts.
    pub dram_budget: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: SimReport,
    pub timeline: Vec<ScheduleEvent>,
    pub jobs: Vec<Job>,
}

/// Runs a scenario against the builtin catalog.
pub fn run(config: &ScenarioConfig) -> Result<SimOutput, SimError> {
    run_with(config, &catalog::builtin_catalog(), &RunOptions::default())
}

pub fn run_with(config: &ScenarioConfig, catalog: &[BenchmarkSpec], options: &RunOptions) -> Result<SimOutput, SimError> {
    let scenario = config.resolve(catalog)?;
    simulate(&scenario, options)
}

pub fn simulate(scenario: &Scenario, options: &RunOptions) -> Result<SimOutput, SimError> {
    let mut sim = Sim::new(scenario, options);
    sim.run()?;
    let report = report::summarize(&sim.timeline, scenario);
    Ok(SimOutput { report, timeline: sim.timeline, jobs: sim.jobs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AfterReset {
    Requeue,
    Starve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Restoring { job: JobId, until: Nanos },
    Running { job: JobId, started: Nanos, until: Nanos, event: usize },
    Saving { job: JobId, until: Nanos },
    Resetting { job: JobId, until: Nanos, after: AfterReset },
}

impl Phase {
    fn end(&self) -> Option<Nanos> {
        match *self {
            Phase::Idle => None,
            Phase::Restoring { until, .. }
            | Phase::Running { until, .. }
            | Phase::Saving { until, .. }
            | Phase::Resetting { until, .. } => Some(until),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SlotState {
    id: SlotId,
    phase: Phase,
    /// Job promised this slot once the current occupant has been saved or evicted.
    claim: Option<JobId>,
    /// Timeline index of the event whose interval ends with the current phase.
    event: Option<usize>,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    options: &'a RunOptions,
    jobs: Vec<Job>,
    pending: VecDeque<JobId>,
    queue: Vec<JobId>,
    slots: Vec<SlotState>,
    occupancy: Occupancy,
    store: ContextStore,
    timeline: Vec<ScheduleEvent>,
    now: Nanos,
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario, options: &'a RunOptions) -> Self {
        let jobs: Vec<Job> = scenario
            .jobs
            .iter()
            .map(|spec| Job::from_spec(spec, scenario.seed.wrapping_add(u64::from(spec.id.0)), scenario.verification_kernel))
            .collect();
        let mut order: Vec<JobId> = jobs.iter().map(|j| j.id).collect();
        order.sort_by_key(|id| (jobs[id.0 as usize].arrival_ns, *id));
        let mut slots: Vec<SlotState> = scenario
            .fabric
            .slots
            .iter()
            .map(|s| SlotState { id: s.id, phase: Phase::Idle, claim: None, event: None })
            .collect();
        slots.sort_by_key(|s| s.id);
        let mut store = ContextStore::from_seed(scenario.seed);
        if let Some(budget) = options.dram_budget {
            store = store.with_budget(budget);
        }
        Self {
            scenario,
            options,
            jobs,
            pending: order.into(),
            queue: Vec::new(),
            slots,
            occupancy: Occupancy::new(&scenario.fabric),
            store,
            timeline: Vec::new(),
            now: 0,
        }
    }

    fn job(&self, id: JobId) -> &Job {
        &self.jobs[id.0 as usize]
    }

    fn job_mut(&mut self, id: JobId) -> &mut Job {
        &mut self.jobs[id.0 as usize]
    }

    fn emit(&mut self, kind: EventKind, job: JobId, slot: Option<SlotId>, duration_ns: Nanos) -> usize {
        self.timeline.push(ScheduleEvent { at_ns: self.now, kind, job, slot, duration_ns });
        self.timeline.len() - 1
    }

    fn run(&mut self) -> Result<(), SimError> {
        loop {
            let next_arrival = self.pending.front().map(|id| self.job(*id).arrival_ns);
            let next_phase = self.slots.iter().filter_map(|s| s.phase.end()).min();
            let Some(t) = next_arrival.into_iter().chain(next_phase).min() else {
                break;
            };
            if let Some(h) = self.scenario.horizon_ns {
                if t > h {
                    self.now = h.max(self.now);
                    self.cut_at_horizon();
                    break;
                }
            }
            self.now = t;
            while let Some(&id) = self.pending.front() {
                if self.job(id).arrival_ns != t {
                    break;
                }
                self.pending.pop_front();
                self.job_mut(id).state = JobState::Waiting;
                self.emit(EventKind::Arrive, id, None, 0);
                self.queue.push(id);
            }
            self.settle()?;
        }
        Ok(())
    }

    fn settle(&mut self) -> Result<(), SimError> {
        loop {
            let mut changed = false;
            for i in 0..self.slots.len() {
                if self.slots[i].phase.end() == Some(self.now) {
                    self.end_phase(i)?;
                    changed = true;
                }
            }
            changed |= self.dispatch_pass()?;
            changed |= self.priority_pass()?;
            self.check_invariants();
            if !changed {
                return Ok(());
            }
        }
    }

    fn end_phase(&mut self, i: usize) -> Result<(), SimError> {
        let slot = self.slots[i].id;
        match self.slots[i].phase {
            Phase::Idle => {}
            Phase::Restoring { job, .. } => self.start_slice(i, job),
            Phase::Running { job, started, .. } => {
                let elapsed = self.now - started;
                self.job_mut(job).advance(elapsed);
                if self.job(job).state == JobState::Completed {
                    self.complete(i, job);
                    return Ok(());
                }
                let snapshot = self.running_view(i, job);
                let waiting = self.waiting_views();
                match policies::on_quantum_expire(&self.scenario.policy, &snapshot, &waiting, &self.scenario.fabric) {
                    Decision::PreemptAndDispatch { next, .. } => {
                        self.emit(EventKind::QuantumExpire, job, Some(slot), 0);
                        self.slots[i].claim = Some(next);
                        self.preempt(i, job)?;
                    }
                    Decision::EvictRestartAndDispatch { next, .. } => {
                        self.emit(EventKind::QuantumExpire, job, Some(slot), 0);
                        self.slots[i].claim = next;
                        self.evict(i, job);
                    }
                    _ => self.start_slice(i, job),
                }
            }
            Phase::Saving { job, .. } => {
                let reset = self.scenario.cost_model.reset_ns;
                let event = self.emit(EventKind::Reset, job, Some(slot), reset);
                self.set_phase(i, Phase::Resetting { job, until: self.now + reset, after: AfterReset::Requeue }, event);
            }
            Phase::Resetting { job, after, .. } => {
                self.occupancy.release(slot);
                self.slots[i].phase = Phase::Idle;
                self.slots[i].event = None;
                match after {
                    AfterReset::Requeue => self.queue.push(job),
                    AfterReset::Starve => {
                        let now = self.now;
                        let j = self.job_mut(job);
                        j.state = JobState::Starved;
                        j.finished_at = Some(now);
                        self.emit(EventKind::Starve, job, Some(slot), 0);
                    }
                }
            }
        }
        Ok(())
    }

    fn set_phase(&mut self, i: usize, phase: Phase, event: usize) {
        self.slots[i].phase = phase;
        self.slots[i].event = Some(event);
    }

    fn start_slice(&mut self, i: usize, job: JobId) {
        let slot = self.slots[i].id;
        let limit = self.scenario.policy.slice_limit().unwrap_or(Nanos::MAX);
        let (_, slice) = self.job(job).peek(limit);
        self.job_mut(job).state = JobState::Running;
        let event = self.emit(EventKind::Dispatch, job, Some(slot), slice);
        let started = self.now;
        self.set_phase(i, Phase::Running { job, started, until: started + slice, event }, event);
    }

    fn complete(&mut self, i: usize, job: JobId) {
        let slot = self.slots[i].id;
        let now = self.now;
        self.job_mut(job).finished_at = Some(now);
        self.emit(EventKind::Complete, job, Some(slot), 0);
        self.occupancy.release(slot);
        self.slots[i].phase = Phase::Idle;
        self.slots[i].event = None;
    }

    /// Saves the running job's context and starts the save transfer.
    fn preempt(&mut self, i: usize, job: JobId) -> Result<(), SimError> {
        let slot = self.slots[i].id;
        let model = self.scenario.frame_model;
        let frames = self.job(job).frames;
        if self.job(job).region.is_none() {
            let region = self.store.allocate_region(frames, &model).map_err(|source| SimError::Context { job, source })?;
            self.job_mut(job).region = Some(region);
        }
        let j = self.job(job);
        let state = RuntimeState { job_id: job, slot_id: slot, remaining_cycles: j.remaining_cycles, kernel_state: j.kernel_state };
        let image = contextstore::capture(&state, self.now, &model, frames);
        let mut blob = self.store.seal(&image);
        if let Some(hook) = self.options.tamper.filter(|h| h.job == job) {
            flip_bit(&mut blob, hook.bit);
        }
        let j = self.job_mut(job);
        j.context = Some(blob);
        j.state = JobState::Preempted;
        let cost = save_cost(frames, &self.scenario.cost_model);
        let event = self.emit(EventKind::Save, job, Some(slot), cost);
        self.set_phase(i, Phase::Saving { job, until: self.now + cost }, event);
        Ok(())
    }

    /// Discards the running job's progress and resets the slot.
    fn evict(&mut self, i: usize, job: JobId) {
        let slot = self.slots[i].id;
        let j = self.job_mut(job);
        j.remaining_cycles = j.service_cycles;
        j.kernel_state = j.kernel_seed;
        j.evictions += 1;
        j.state = JobState::Waiting;
        j.slot = None;
        let after = if detect_starvation(self.job(job), &self.scenario.starvation_rule) {
            AfterReset::Starve
        } else {
            AfterReset::Requeue
        };
        let reset = self.scenario.cost_model.reset_ns;
        let event = self.emit(EventKind::Reset, job, Some(slot), reset);
        self.set_phase(i, Phase::Resetting { job, until: self.now + reset, after }, event);
    }

    /// Places `job` into the free slot `i`, restoring its context if it has one.
    fn start(&mut self, i: usize, job: JobId) -> Result<(), SimError> {
        let slot = self.slots[i].id;
        self.queue.retain(|q| *q != job);
        self.occupancy.assign(slot, job)?;
        match self.job(job).context.clone() {
            None => {
                self.job_mut(job).slot = Some(slot);
                self.start_slice(i, job);
            }
            Some(blob) => {
                let image = self.store.unseal(&blob).map_err(|source| SimError::Context { job, source })?;
                let state = contextstore::restore(&image).map_err(|source| SimError::Context { job, source })?;
                let j = self.job(job);
                if state.job_id != job || state.slot_id != slot || state.remaining_cycles > j.service_cycles {
                    return Err(SimError::ContextMismatch { job });
                }
                let frames = j.frames;
                let j = self.job_mut(job);
                j.remaining_cycles = state.remaining_cycles;
                j.kernel_state = state.kernel_state;
                j.context = None;
                j.switches += 1;
                j.state = JobState::Running;
                let cost = restore_cost(frames, &self.scenario.cost_model) + self.scenario.cost_model.reconfig_load_ns;
                let event = self.emit(EventKind::Restore, job, Some(slot), cost);
                self.set_phase(i, Phase::Restoring { job, until: self.now + cost }, event);
            }
        }
        Ok(())
    }

    fn claimed(&self, job: JobId) -> bool {
        self.slots.iter().any(|s| s.claim == Some(job))
    }

    fn waiting_views(&self) -> Vec<WaitingJob> {
        self.queue.iter().filter(|id| !self.claimed(**id)).map(|id| self.job(*id).waiting_view()).collect()
    }

    fn running_view(&self, i: usize, job: JobId) -> RunningJob {
        let j = self.job(job);
        RunningJob {
            id: job,
            priority: j.priority,
            slot: self.slots[i].id,
            remaining_cycles: j.remaining_cycles,
            service_cycles: j.service_cycles,
        }
    }

    fn dispatch_pass(&mut self) -> Result<bool, SimError> {
        let mut changed = false;
        for i in 0..self.slots.len() {
            if self.slots[i].phase == Phase::Idle {
                if let Some(job) = self.slots[i].claim.take() {
                    self.start(i, job)?;
                    changed = true;
                }
            }
        }
        loop {
            let waiting = self.waiting_views();
            match policies::on_slot_free(&self.scenario.policy, &waiting, &self.scenario.fabric, &self.occupancy) {
                Decision::DispatchToFreeSlot { job, slot } => {
                    let i = self.slot_index(slot);
                    self.start(i, job)?;
                    changed = true;
                }
                _ => return Ok(changed),
            }
        }
    }

    /// Lets waiting jobs preempt strictly lower-priority running work.
    fn priority_pass(&mut self) -> Result<bool, SimError> {
        if self.scenario.policy.kind != PolicyKind::PriorityPreemptive {
            return Ok(false);
        }
        let mut changed = false;
        for waiting in policies::service_order(&self.scenario.policy, &self.waiting_views()) {
            let running: Vec<RunningJob> = self
                .slots
                .iter()
                .enumerate()
                .filter_map(|(i, s)| match s.phase {
                    Phase::Running { job, started, .. } => {
                        let (cycles, _) = self.job(job).peek(self.now - started);
                        let mut view = self.running_view(i, job);
                        view.remaining_cycles -= cycles;
                        Some(view)
                    }
                    _ => None,
                })
                .collect();
            if let Decision::PreemptAndDispatch { slot, next } =
                policies::on_arrival(&self.scenario.policy, &waiting, &running, &self.scenario.fabric)
            {
                let i = self.slot_index(slot);
                let Phase::Running { job, started, event, .. } = self.slots[i].phase else {
                    continue;
                };
                let elapsed = self.now - started;
                self.timeline[event].duration_ns = self.job_mut(job).advance(elapsed);
                self.slots[i].claim = Some(next);
                self.preempt(i, job)?;
                changed = true;
            }
        }
        Ok(changed)
    }

    /// Stops the run at the horizon, clipping every in-flight interval.
    fn cut_at_horizon(&mut self) {
        for i in 0..self.slots.len() {
            if let Phase::Running { job, started, event, .. } = self.slots[i].phase {
                let elapsed = self.now - started;
                self.timeline[event].duration_ns = self.job_mut(job).advance(elapsed);
            } else if let Some(event) = self.slots[i].event {
                let e = &mut self.timeline[event];
                e.duration_ns = e.duration_ns.min(self.now - e.at_ns);
            }
        }
    }

    fn slot_index(&self, slot: SlotId) -> usize {
        self.slots.iter().position(|s| s.id == slot).expect("policy returned a fabric slot")
    }

    fn check_invariants(&self) {
        if !cfg!(debug_assertions) {
            return;
        }
        for s in &self.slots {
            let occupant = match s.phase {
                Phase::Idle => None,
                Phase::Restoring { job, .. }
                | Phase::Running { job, .. }
                | Phase::Saving { job, .. }
                | Phase::Resetting { job, .. } => Some(job),
            };
            debug_assert_eq!(self.occupancy.occupant(s.id), occupant, "slot {} occupancy", s.id);
        }
        for j in &self.jobs {
            debug_assert!(j.remaining_cycles <= j.service_cycles);
            debug_assert_eq!(j.state == JobState::Completed, j.remaining_cycles == 0, "job {}", j.id);
        }
        // work conservation: nothing waits while a slot it could use sits idle and unclaimed
        let waiting = self.waiting_views();
        debug_assert_eq!(
            policies::on_slot_free(&self.scenario.policy, &waiting, &self.scenario.fabric, &self.occupancy),
            Decision::Idle
        );
    }
}

fn flip_bit(blob: &mut SealedContext, bit: usize) {
    let total = (blob.nonce.len() + blob.ciphertext.len() + blob.tag.len()) * 8;
    let bit = bit % total;
    let (byte, mask) = (bit / 8, 1u8 << (bit % 8));
    let n = blob.nonce.len();
    let c = blob.ciphertext.len();
    if byte < n {
        blob.nonce[byte] ^= mask;
    } else if byte < n + c {
        blob.ciphertext[byte - n] ^= mask;
    } else {
        blob.tag[byte - n - c] ^= mask;
    }
}

//! Preemption-correctness harness.
//!
//! A chained kernel (each step consumes the previous output) is run straight
//! through and, separately, with save -> reset -> restore cycles injected at
//! random step boundaries. The two final states must match bit for bit.

use std::collections::BTreeSet;

use rand::{Rng, RngExt, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

use crate::contextstore::{self, ContextError, ContextStore, RuntimeState, SealedContext};
use crate::costmodel::FrameModel;
use crate::fabric::SlotId;
use crate::JobId;

/// MMIX LCG multiplier.
pub const KERNEL_MULTIPLIER: u64 = 6_364_136_223_846_793_005;
/// MMIX LCG increment.
pub const KERNEL_INCREMENT: u64 = 1_442_695_040_888_963_407;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("invalid preemption plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Context(#[from] ContextError),
}

pub fn kernel_step(state: u64) -> u64 {
    state.wrapping_mul(KERNEL_MULTIPLIER).wrapping_add(KERNEL_INCREMENT)
}

/// Applies `steps` kernel steps in O(log steps) by composing the affine map.
pub fn kernel_jump(state: u64, mut steps: u64) -> u64 {
    // accumulated map x -> acc_mul * x + acc_add
    let (mut acc_mul, mut acc_add) = (1u64, 0u64);
    let (mut cur_mul, mut cur_add) = (KERNEL_MULTIPLIER, KERNEL_INCREMENT);
    while steps > 0 {
        if steps & 1 == 1 {
            acc_mul = acc_mul.wrapping_mul(cur_mul);
            acc_add = acc_add.wrapping_mul(cur_mul).wrapping_add(cur_add);
        }
        cur_add = cur_add.wrapping_mul(cur_mul).wrapping_add(cur_add);
        cur_mul = cur_mul.wrapping_mul(cur_mul);
        steps >>= 1;
    }
    state.wrapping_mul(acc_mul).wrapping_add(acc_add)
}

/// Live state of the chained computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainedKernel {
    pub state: u64,
    pub steps_done: u64,
    pub total_steps: u64,
}

impl ChainedKernel {
    pub fn new(seed: u64, total_steps: u64) -> Self {
        Self { state: seed, steps_done: 0, total_steps }
    }

    /// Steps until `steps_done == target` (clamped to `total_steps`).
    pub fn run_until(&mut self, target: u64) {
        let target = target.min(self.total_steps);
        while self.steps_done < target {
            self.state = kernel_step(self.state);
            self.steps_done += 1;
        }
    }

    fn runtime_state(&self) -> RuntimeState {
        RuntimeState {
            job_id: JobId(0),
            slot_id: SlotId(1),
            remaining_cycles: self.total_steps - self.steps_done,
            kernel_state: self.state,
        }
    }
}

pub fn run_uninterrupted(seed: u64, total_steps: u64) -> u64 {
    let mut kernel = ChainedKernel::new(seed, total_steps);
    kernel.run_until(total_steps);
    kernel.state
}

/// Step boundaries at which to preempt (before executing that step).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreemptionPlan {
    points: Vec<u64>,
    pub seed: u64,
}

impl PreemptionPlan {
    pub fn new(points: Vec<u64>, total_steps: u64, seed: u64) -> Result<Self, VerifyError> {
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(VerifyError::InvalidPlan("points must be strictly increasing".into()));
        }
        if let Some(&last) = points.last() {
            if last >= total_steps {
                return Err(VerifyError::InvalidPlan(format!("point {last} is not below {total_steps} steps")));
            }
        }
        Ok(Self { points, seed })
    }

    pub fn empty() -> Self {
        Self { points: Vec::new(), seed: 0 }
    }

    pub fn points(&self) -> &[u64] {
        &self.points
    }
}

/// Samples `k` distinct boundaries uniformly from `[0, total_steps)` with
/// Floyd's algorithm over a SplitMix64-seeded xoshiro256++ stream.
pub fn random_plan(rng_seed: u64, total_steps: u64, k: u64) -> Result<PreemptionPlan, VerifyError> {
    if k > total_steps {
        return Err(VerifyError::InvalidPlan(format!("{k} preemptions requested for {total_steps} steps")));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(rng_seed);
    let mut chosen = BTreeSet::new();
    for j in total_steps - k..total_steps {
        let t = rng.random_range(0..=j);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    Ok(PreemptionPlan { points: chosen.into_iter().collect(), seed: rng_seed })
}

/// Corrupts one bit of the sealed blob at the `at_point`-th preemption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tamper {
    pub at_point: usize,
    /// Bit index into the wire-format blob, reduced modulo its length.
    pub bit: usize,
}

/// Runs the kernel, performing capture -> seal -> reset -> unseal -> restore at
/// every plan point.
pub fn run_with_preemptions(
    seed: u64,
    total_steps: u64,
    plan: &PreemptionPlan,
    store: &mut ContextStore,
    tamper: Option<Tamper>,
) -> Result<u64, VerifyError> {
    let model = FrameModel::SERIES7;
    let mut kernel = ChainedKernel::new(seed, total_steps);
    if !plan.points.is_empty() {
        store.allocate_region(1, &model)?;
    }
    for (n, &point) in plan.points.iter().enumerate() {
        kernel.run_until(point);
        let image = contextstore::capture(&kernel.runtime_state(), kernel.steps_done, &model, 1);
        let mut blob = store.seal(&image).to_bytes();

        kernel = ChainedKernel { state: 0, steps_done: 0, total_steps };
        debug_assert_eq!(kernel, ChainedKernel::new(0, total_steps));

        if let Some(t) = tamper.filter(|t| t.at_point == n) {
            let bit = t.bit % (blob.len() * 8);
            blob[bit / 8] ^= 1 << (bit % 8);
        }
        let image = store.unseal(&SealedContext::from_bytes(&blob)?)?;
        let restored = contextstore::restore(&image)?;
        kernel = ChainedKernel {
            state: restored.kernel_state,
            steps_done: total_steps - restored.remaining_cycles,
            total_steps,
        };
    }
    kernel.run_until(total_steps);
    Ok(kernel.state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyConfig {
    pub steps: u64,
    pub preemptions: u64,
    pub trials: u32,
    pub seed: u64,
    /// Inject one bit flip per trial and expect every unseal to fail.
    pub tamper: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { steps: 100_000, preemptions: 10, trials: 100, seed: 0, tamper: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrialSummary {
    pub trials: u32,
    /// Trials whose final state equalled the uninterrupted run.
    pub matched: u32,
    pub mismatched: u32,
    /// Tamper trials that aborted with an integrity error.
    pub tamper_detected: u32,
    /// Tamper trials that ended any other way.
    pub tamper_missed: u32,
}

impl TrialSummary {
    pub fn passed(&self) -> bool {
        self.mismatched == 0 && self.tamper_missed == 0
    }
}

pub fn run_trials(config: &VerifyConfig) -> Result<TrialSummary, VerifyError> {
    if config.tamper && config.trials > 0 && config.preemptions == 0 {
        return Err(VerifyError::InvalidPlan("tamper mode needs at least one preemption".into()));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let mut summary = TrialSummary { trials: config.trials, ..TrialSummary::default() };
    for _ in 0..config.trials {
        let kernel_seed = rng.next_u64();
        let plan = random_plan(rng.next_u64(), config.steps, config.preemptions)?;
        let mut store = ContextStore::from_seed(rng.next_u64());
        let tamper = config.tamper.then(|| Tamper {
            at_point: rng.random_range(0..plan.points.len()),
            bit: rng.random_range(0..usize::MAX),
        });
        let expected = run_uninterrupted(kernel_seed, config.steps);
        let outcome = run_with_preemptions(kernel_seed, config.steps, &plan, &mut store, tamper);
        match (tamper, outcome) {
            (None, Ok(state)) if state == expected => summary.matched += 1,
            (None, Ok(_)) => summary.mismatched += 1,
            (None, Err(e)) => return Err(e),
            (Some(_), Err(VerifyError::Context(ContextError::Integrity(_)))) => summary.tamper_detected += 1,
            (Some(_), _) => summary.tamper_missed += 1,
        }
    }
    Ok(summary)
}

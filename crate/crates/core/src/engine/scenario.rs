//! Scenario files and their resolution against a catalog.

use std::num::NonZeroU32;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{self, BenchmarkSpec, ResourceVector};
use crate::costmodel::{estimate_frames, Clock, FrameCountPolicy, FrameModel, ModelError, SwitchCostModel};
use crate::fabric::{self, FabricConfig, FabricError};
use crate::policies::PolicyDescriptor;
use crate::{JobId, Nanos};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("unknown benchmark '{0}'")]
    UnknownBenchmark(String),
    #[error("benchmark '{0}' has no latency_cycles; set latency_cycles_override in the workload entry")]
    MissingLatency(String),
    #[error("benchmark '{0}' has a latency of zero cycles")]
    ZeroLatency(String),
    #[error("unknown fabric '{0}'")]
    UnknownFabric(String),
    #[error("scenario must give exactly one of 'fabric' and 'fabric_ref'")]
    FabricChoice,
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("quantum of {quantum_ns} ns is shorter than one cycle of '{benchmark}' ({cycle_ns} ns)")]
    QuantumTooShort { benchmark: String, quantum_ns: Nanos, cycle_ns: Nanos },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("benchmark '{benchmark}' fits no slot of fabric '{fabric}'")]
    Unplaceable { benchmark: String, fabric: String },
    #[error("starvation rule needs at least one eviction")]
    StarvationRule,
    #[error("quantum list is empty")]
    EmptyQuantumList,
}

/// One workload line: `count` identical jobs arriving together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobTemplate {
    pub benchmark: String,
    #[serde(default = "one")]
    pub count: u32,
    #[serde(default)]
    pub arrival_ns: Nanos,
    #[serde(default)]
    pub priority: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_cycles_override: Option<u64>,
}

fn one() -> u32 {
    1
}

impl JobTemplate {
    pub fn new(benchmark: &str, count: u32) -> Self {
        Self { benchmark: benchmark.into(), count, arrival_ns: 0, priority: 0, latency_cycles_override: None }
    }
}

/// Frame policy as written in scenario files. `resource-estimate` uses the
/// scenario's `frame_model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FramePolicySpec {
    #[default]
    SingleFrame,
    Fixed {
        frames: NonZeroU32,
    },
    ResourceEstimate,
}

impl FramePolicySpec {
    pub fn to_policy(self, model: FrameModel) -> FrameCountPolicy {
        match self {
            FramePolicySpec::SingleFrame => FrameCountPolicy::SingleFrame,
            FramePolicySpec::Fixed { frames } => FrameCountPolicy::Fixed(frames),
            FramePolicySpec::ResourceEstimate => FrameCountPolicy::ResourceEstimate(model),
        }
    }
}

/// A job is ruled starved after this many evictions that each discarded all progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarvationRule {
    pub zero_progress_evictions: u32,
}

impl Default for StarvationRule {
    fn default() -> Self {
        Self { zero_progress_evictions: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fabric: Option<FabricConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fabric_ref: Option<String>,
    pub workload: Vec<JobTemplate>,
    pub policy: PolicyDescriptor,
    #[serde(default)]
    pub frame_policy: FramePolicySpec,
    #[serde(default)]
    pub frame_model: FrameModel,
    #[serde(default)]
    pub cost_model: SwitchCostModel,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_ns: Option<Nanos>,
    #[serde(default)]
    pub starvation_rule: StarvationRule,
    /// Step the chained verification kernel once per executed cycle.
    #[serde(default)]
    pub verification_kernel: bool,
}

impl ScenarioConfig {
    pub fn new(fabric_ref: &str, workload: Vec<JobTemplate>, policy: PolicyDescriptor) -> Self {
        Self {
            name: String::new(),
            fabric: None,
            fabric_ref: Some(fabric_ref.into()),
            workload,
            policy,
            frame_policy: FramePolicySpec::default(),
            frame_model: FrameModel::default(),
            cost_model: SwitchCostModel::default(),
            seed: 0,
            horizon_ns: None,
            starvation_rule: StarvationRule::default(),
            verification_kernel: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn resolve(&self, catalog: &[BenchmarkSpec]) -> Result<Scenario, ConfigError> {
        let fabric = match (&self.fabric, &self.fabric_ref) {
            (Some(f), None) => f.clone(),
            (None, Some(name)) => fabric::builtin_fabric(name).ok_or_else(|| ConfigError::UnknownFabric(name.clone()))?,
            _ => return Err(ConfigError::FabricChoice),
        };
        fabric.validate()?;
        self.policy.validate().map_err(ConfigError::Policy)?;
        self.frame_model.validate()?;
        if self.starvation_rule.zero_progress_evictions == 0 {
            return Err(ConfigError::StarvationRule);
        }
        let frame_policy = self.frame_policy.to_policy(self.frame_model);

        let mut jobs = Vec::new();
        for template in &self.workload {
            let spec = catalog::find(catalog, &template.benchmark)
                .ok_or_else(|| ConfigError::UnknownBenchmark(template.benchmark.clone()))?;
            let cycles = template
                .latency_cycles_override
                .or(spec.latency_cycles)
                .ok_or_else(|| ConfigError::MissingLatency(spec.name.clone()))?;
            if cycles == 0 {
                return Err(ConfigError::ZeroLatency(spec.name.clone()));
            }
            if !fabric.slots.iter().any(|s| fabric::fits(&spec.resources, &s.capacity)) {
                return Err(ConfigError::Unplaceable { benchmark: spec.name.clone(), fabric: fabric.name.clone() });
            }
            let clock = Clock::from_mhz(spec.clock_mhz)?;
            if let Some(q) = self.policy.slice_limit() {
                if q < clock.max_cycle_ns() {
                    return Err(ConfigError::QuantumTooShort {
                        benchmark: spec.name.clone(),
                        quantum_ns: q,
                        cycle_ns: clock.max_cycle_ns(),
                    });
                }
            }
            for _ in 0..template.count {
                let id = JobId(jobs.len() as u32);
                jobs.push(JobSpec {
                    id,
                    benchmark: spec.key.clone(),
                    demand: spec.resources,
                    service_cycles: cycles,
                    clock,
                    service_ns: clock.cycles_to_ns(cycles),
                    priority: template.priority,
                    arrival_ns: template.arrival_ns,
                    frames: estimate_frames(&spec.resources, &frame_policy),
                });
            }
        }

        Ok(Scenario {
            name: self.name.clone(),
            fabric,
            policy: self.policy,
            frame_policy,
            frame_model: self.frame_model,
            cost_model: self.cost_model,
            seed: self.seed,
            horizon_ns: self.horizon_ns,
            starvation_rule: self.starvation_rule,
            verification_kernel: self.verification_kernel,
            jobs,
        })
    }
}

/// A job instance after catalog resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub id: JobId,
    pub benchmark: String,
    pub demand: ResourceVector,
    pub service_cycles: u64,
    pub clock: Clock,
    pub service_ns: Nanos,
    pub priority: i32,
    pub arrival_ns: Nanos,
    pub frames: u32,
}

/// A validated scenario with its workload expanded into jobs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub fabric: FabricConfig,
    pub policy: PolicyDescriptor,
    pub frame_policy: FrameCountPolicy,
    pub frame_model: FrameModel,
    pub cost_model: SwitchCostModel,
    pub seed: u64,
    pub horizon_ns: Option<Nanos>,
    pub starvation_rule: StarvationRule,
    pub verification_kernel: bool,
    pub jobs: Vec<JobSpec>,
}

impl Scenario {
    pub fn job(&self, id: JobId) -> Option<&JobSpec> {
        self.jobs.get(id.0 as usize)
    }
}

use std::collections::BTreeMap;

use proptest::prelude::*;

use fps_core::catalog::builtin_catalog;
use fps_core::contextstore::ContextError;
use fps_core::costmodel::switch_cost;
use fps_core::engine::{
    run, run_with, sweep, ConfigError, EventKind, JobState, JobTemplate, RunOptions, ScenarioConfig, ScheduleEvent,
    SimError, SimOutput, TamperHook,
};
use fps_core::policies::{PolicyDescriptor, PolicyKind};
use fps_core::report::Outcome;
use fps_core::verify::run_uninterrupted;
use fps_core::{JobId, SlotId};

fn policy(kind: PolicyKind, quantum: Option<u64>) -> PolicyDescriptor {
    PolicyDescriptor::new(kind, quantum)
}

fn job(benchmark: &str, arrival_ns: u64, priority: i32) -> JobTemplate {
    JobTemplate { arrival_ns, priority, ..JobTemplate::new(benchmark, 1) }
}

fn with_latency(benchmark: &str, cycles: u64) -> JobTemplate {
    JobTemplate { latency_cycles_override: Some(cycles), ..JobTemplate::new(benchmark, 1) }
}

fn events_of(out: &SimOutput, id: JobId) -> Vec<ScheduleEvent> {
    out.timeline.iter().copied().filter(|e| e.job == id).collect()
}

/// Invariants every finished run must satisfy.
fn check_run(config: &ScenarioConfig, out: &SimOutput) {
    let scenario = config.resolve(&builtin_catalog()).unwrap();

    // totally ordered in time
    assert!(out.timeline.windows(2).all(|w| w[0].at_ns <= w[1].at_ns));

    // slot exclusivity
    let mut per_slot: BTreeMap<SlotId, Vec<(u64, u64)>> = BTreeMap::new();
    for e in &out.timeline {
        if let (Some(slot), true) = (e.slot, e.duration_ns > 0) {
            per_slot.entry(slot).or_default().push((e.at_ns, e.end_ns()));
        }
    }
    for intervals in per_slot.values() {
        assert!(intervals.windows(2).all(|w| w[0].1 <= w[1].0), "overlapping slot intervals");
    }

    for spec in &scenario.jobs {
        let events = events_of(out, spec.id);
        let metrics = out.report.job(spec.id).unwrap();
        let executed: u64 = events.iter().filter(|e| e.kind == EventKind::Dispatch).map(|e| e.duration_ns).sum();
        let saves = events.iter().filter(|e| e.kind == EventKind::Save).count();
        let restores = events.iter().filter(|e| e.kind == EventKind::Restore).count();
        match metrics.outcome {
            Outcome::Completed => {
                assert_eq!(executed, spec.service_ns, "job {}", spec.id);
                assert_eq!(saves, restores);
                assert!(metrics.turnaround_ns >= spec.service_ns);
                assert_eq!(
                    metrics.turnaround_ns,
                    spec.service_ns + u64::from(metrics.switches) * switch_cost(spec.frames, &config.cost_model) + metrics.waiting_ns
                );
                assert_eq!(out.jobs[spec.id.0 as usize].remaining_cycles, 0);
            }
            Outcome::Starved => assert_eq!(saves, 0),
            Outcome::HorizonExceeded => assert!(config.horizon_ns.is_some()),
        }
        // each job runs in a single slot
        let slots: std::collections::BTreeSet<_> =
            events.iter().filter(|e| e.kind == EventKind::Save).filter_map(|e| e.slot).collect();
        assert!(slots.len() <= 1);
    }
    assert!(out.report.slot_utilization.iter().all(|u| (0.0..=1.0).contains(&u.utilization)));
    assert!(out.report.jobs.iter().all(|j| j.turnaround_ns + config.workload.iter().map(|w| w.arrival_ns).min().unwrap_or(0) <= out.report.makespan_ns.max(config.horizon_ns.unwrap_or(0))));
}

#[test]
fn empty_workload() {
    let config = ScenarioConfig::new("1-slot", vec![], policy(PolicyKind::RoundRobinPreemptive, Some(250_000)));
    let out = run(&config).unwrap();
    assert!(out.timeline.is_empty());
    assert!(out.report.jobs.is_empty());
    assert_eq!(out.report.makespan_ns, 0);
}

#[test]
fn evict_restart_with_long_quantum_completes() {
    let config = ScenarioConfig::new(
        "1-slot",
        vec![JobTemplate::new("ml-kem-server", 5)],
        policy(PolicyKind::RoundRobinEvictRestart, Some(500_000)),
    );
    let out = run(&config).unwrap();
    assert_eq!(out.report.starved_count, 0);
    assert_eq!(out.report.completed_count(), 5);
    assert_eq!(out.report.makespan_ns, 5 * 348_060);
    check_run(&config, &out);
}

#[test]
fn service_equal_to_quantum_is_not_evicted() {
    let config = ScenarioConfig::new(
        "1-slot",
        vec![JobTemplate::new("ml-kem-server", 3)],
        policy(PolicyKind::RoundRobinEvictRestart, Some(348_060)),
    );
    let out = run(&config).unwrap();
    assert_eq!(out.report.completed_count(), 3);
    assert!(out.timeline.iter().all(|e| e.kind != EventKind::QuantumExpire && e.kind != EventKind::Reset));
}

#[test]
fn evicted_jobs_follow_quantum_then_reset() {
    let config = ScenarioConfig::from_json(include_str!("../data/scenarios/scenario-i-evict-restart.json")).unwrap();
    let out = run(&config).unwrap();
    let kinds: Vec<EventKind> = events_of(&out, JobId(0)).iter().map(|e| e.kind).collect();
    use EventKind::*;
    assert_eq!(kinds, [Arrive, Dispatch, QuantumExpire, Reset, Dispatch, QuantumExpire, Reset, Starve]);
    assert!(out.jobs.iter().all(|j| j.state == JobState::Starved && j.evictions == 2));
    check_run(&config, &out);
}

#[test]
fn scenario_ii_trace() {
    let config = ScenarioConfig::from_json(include_str!("../data/scenarios/scenario-ii.json")).unwrap();
    let out = run(&config).unwrap();
    let h264: Vec<(u64, EventKind, u64)> =
        events_of(&out, JobId(0)).iter().map(|e| (e.at_ns, e.kind, e.duration_ns)).collect();
    use EventKind::*;
    assert_eq!(
        h264,
        [
            (0, Arrive, 0),
            (0, Dispatch, 500_000),
            (500_000, QuantumExpire, 0),
            (500_000, Save, 31_100),
            (531_100, Reset, 0),
            (879_160, Restore, 33_700),
            (912_860, Dispatch, 500_000),
            (1_412_860, QuantumExpire, 0),
            (1_412_860, Save, 31_100),
            (1_443_960, Reset, 0),
            (1_792_020, Restore, 33_700),
            (1_825_720, Dispatch, 500_000),
            (2_325_720, QuantumExpire, 0),
            (2_325_720, Save, 31_100),
            (2_356_820, Reset, 0),
            (2_704_880, Restore, 33_700),
            (2_738_580, Dispatch, 210_290),
            (2_948_870, Complete, 0),
        ]
    );
    for id in 1..4 {
        let m = out.report.job(JobId(id)).unwrap();
        assert_eq!(m.waiting_ns + m.service_ns, m.turnaround_ns);
    }
    check_run(&config, &out);
}

#[test]
fn preemption_is_transparent_to_the_kernel() {
    let mut config = ScenarioConfig::from_json(include_str!("../data/scenarios/scenario-ii.json")).unwrap();
    config.verification_kernel = true;
    config.policy.quantum_ns = Some(70_010);
    let out = run(&config).unwrap();
    assert!(out.jobs[0].switches > 10);
    for job in &out.jobs {
        assert_eq!(job.state, JobState::Completed);
        assert_eq!(job.kernel_state, run_uninterrupted(job.kernel_seed, job.service_cycles), "job {}", job.id);
    }
    check_run(&config, &out);
}

#[test]
fn tampered_context_aborts_the_run() {
    let config = ScenarioConfig::from_json(include_str!("../data/scenarios/scenario-ii.json")).unwrap();
    for bit in [0, 200, 3_000, 7_000] {
        let options = RunOptions { tamper: Some(TamperHook { job: JobId(0), bit }), ..RunOptions::default() };
        match run_with(&config, &builtin_catalog(), &options) {
            Err(SimError::Context { job, source: ContextError::Integrity(_) }) => assert_eq!(job, JobId(0)),
            other => panic!("expected integrity failure, got {other:?}"),
        }
    }
    // tampering a job that is never saved changes nothing
    let options = RunOptions { tamper: Some(TamperHook { job: JobId(1), bit: 5 }), ..RunOptions::default() };
    assert!(run_with(&config, &builtin_catalog(), &options).is_ok());
}

#[test]
fn dram_budget_is_enforced() {
    let config = ScenarioConfig::from_json(include_str!("../data/scenarios/scenario-i.json")).unwrap();
    let options = RunOptions { dram_budget: Some(10 * (404 + 64)), ..RunOptions::default() };
    assert!(matches!(
        run_with(&config, &builtin_catalog(), &options),
        Err(SimError::Context { source: ContextError::CapacityExceeded { .. }, .. })
    ));
}

#[test]
fn priority_arrival_preempts_lower_priority_work() {
    let config = ScenarioConfig::new(
        "1-slot",
        vec![job("h-264-encoder", 0, 1), job("ml-kem-server", 100_000, 5), job("ml-kem-server", 200_000, 0)],
        policy(PolicyKind::PriorityPreemptive, None),
    );
    let out = run(&config).unwrap();
    let h = out.report.job(JobId(0)).unwrap();
    assert_eq!(h.switches, 1);
    let urgent = out.report.job(JobId(1)).unwrap();
    assert_eq!(urgent.turnaround_ns, 31_100 + 348_060);
    assert_eq!(urgent.switches, 0);
    // the low-priority arrival never preempts and runs last
    let low = out.report.job(JobId(2)).unwrap();
    assert_eq!(low.switches, 0);
    assert_eq!(h.turnaround_ns, 1_710_290 + 31_100 + 348_060 + 33_700);
    assert_eq!(out.report.makespan_ns, h.turnaround_ns + 348_060);
    check_run(&config, &out);
}

#[test]
fn equal_priority_never_preempts() {
    let config = ScenarioConfig::new(
        "1-slot",
        vec![job("h-264-encoder", 0, 2), job("ml-kem-server", 100_000, 2)],
        policy(PolicyKind::PriorityPreemptive, None),
    );
    let out = run(&config).unwrap();
    assert_eq!(out.report.total_switches, 0);
    assert_eq!(out.report.makespan_ns, 1_710_290 + 348_060);
}

#[test]
fn run_to_completion_is_fifo() {
    let config = ScenarioConfig::new(
        "1-slot",
        vec![JobTemplate::new("h-264-encoder", 2), JobTemplate::new("ml-kem-server", 2)],
        policy(PolicyKind::RunToCompletion, None),
    );
    let out = run(&config).unwrap();
    let completions: Vec<JobId> = out.timeline.iter().filter(|e| e.kind == EventKind::Complete).map(|e| e.job).collect();
    assert_eq!(completions, [JobId(0), JobId(1), JobId(2), JobId(3)]);
    assert_eq!(out.report.total_switches, 0);
    assert_eq!(out.report.makespan_ns, 2 * 1_710_290 + 2 * 348_060);
    assert_eq!(out.report.slot_utilization[0].utilization, 1.0);
}

#[test]
fn multi_slot_uses_smallest_fit_and_runs_in_parallel() {
    let mut config = ScenarioConfig::new(
        "3-slot",
        vec![
            with_latency("viterbi-decoder", 10_000),
            with_latency("viterbi-decoder", 10_000),
            with_latency("viterbi-decoder", 10_000),
            JobTemplate::new("ml-kem-server", 1),
        ],
        policy(PolicyKind::RoundRobinPreemptive, Some(50_000)),
    );
    config.seed = 3;
    let out = run(&config).unwrap();
    let first_slot = |id: u32| events_of(&out, JobId(id)).iter().find(|e| e.kind == EventKind::Dispatch).unwrap().slot;
    assert_eq!(first_slot(0), Some(SlotId(1)));
    assert_eq!(first_slot(1), Some(SlotId(2)));
    assert_eq!(first_slot(2), Some(SlotId(3)));
    // ML-KEM only fits slot 3 and shares it with the third Viterbi job
    assert_eq!(first_slot(3), Some(SlotId(3)));
    assert!(out.report.makespan_ns < 3 * 100_000 + 348_060);
    check_run(&config, &out);
}

#[test]
fn horizon_cuts_the_run() {
    let mut config = ScenarioConfig::from_json(include_str!("../data/scenarios/scenario-i.json")).unwrap();
    config.horizon_ns = Some(1_000_000);
    let out = run(&config).unwrap();
    assert!(out.report.makespan_ns <= 1_000_000);
    assert_eq!(out.report.completed_count(), 0);
    assert!(out.report.jobs.iter().all(|j| j.outcome == Outcome::HorizonExceeded && j.turnaround_ns == 1_000_000));
    let busy = out.report.slot_utilization[0].busy_ns;
    assert_eq!(busy, 1_000_000);
}

#[test]
fn sweep_runs_each_quantum() {
    let config = ScenarioConfig::from_json(include_str!("../data/scenarios/scenario-i.json")).unwrap();
    let runs = sweep(&config, &builtin_catalog(), &[250_000, 500_000, 100_000]).unwrap();
    let quanta: Vec<u64> = runs.iter().map(|r| r.quantum_ns).collect();
    assert_eq!(quanta, [250_000, 500_000, 100_000]);
    assert_eq!(runs[0].result.as_ref().unwrap().report.makespan_ns, 41_286_000);
    assert_eq!(runs[1].result.as_ref().unwrap().report.makespan_ns, 34_806_000);
    assert!(matches!(sweep(&config, &builtin_catalog(), &[]), Err(ConfigError::EmptyQuantumList)));
}

#[test]
fn missing_latency_is_a_config_error() {
    let config = ScenarioConfig::new(
        "1-slot",
        vec![JobTemplate::new("png-decoder", 1)],
        policy(PolicyKind::RoundRobinPreemptive, Some(250_000)),
    );
    let err = run(&config).unwrap_err();
    assert!(matches!(err, SimError::Config(ConfigError::MissingLatency(_))));
    assert!(err.to_string().contains("PNG Decoder"));
}

fn arb_template() -> impl Strategy<Value = JobTemplate> {
    let benchmarks = prop_oneof![
        Just(("ml-kem-server", None)),
        Just(("h-264-encoder", None)),
        (1u64..40_000).prop_map(|c| ("viterbi-decoder", Some(c))),
        (1u64..40_000).prop_map(|c| ("jpeg-decoder", Some(c))),
    ];
    (benchmarks, 1u32..4, 0u64..2_000_000, -2i32..3).prop_map(|((b, lat), count, arrival_ns, priority)| JobTemplate {
        benchmark: b.into(),
        count,
        arrival_ns,
        priority,
        latency_cycles_override: lat,
    })
}

fn arb_config() -> impl Strategy<Value = ScenarioConfig> {
    let policies = prop_oneof![
        (5_000u64..600_000).prop_map(|q| policy(PolicyKind::RoundRobinPreemptive, Some(q))),
        (5_000u64..600_000).prop_map(|q| policy(PolicyKind::RoundRobinEvictRestart, Some(q))),
        Just(policy(PolicyKind::RunToCompletion, None)),
        Just(policy(PolicyKind::PriorityPreemptive, None)),
    ];
    let fabrics = prop_oneof![Just("1-slot"), Just("2-slot"), Just("3-slot")];
    (proptest::collection::vec(arb_template(), 0..6), policies, fabrics, any::<u64>(), any::<bool>()).prop_map(
        |(workload, policy, fabric, seed, kernel)| {
            let mut config = ScenarioConfig::new(fabric, workload, policy);
            config.seed = seed;
            config.verification_kernel = kernel;
            config
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 96, ..ProptestConfig::default() })]

    #[test]
    fn random_scenarios_keep_invariants(config in arb_config()) {
        let out = run(&config).unwrap();
        check_run(&config, &out);
        for job in &out.jobs {
            prop_assert!(matches!(job.state, JobState::Completed | JobState::Starved));
            if config.verification_kernel && job.state == JobState::Completed {
                prop_assert_eq!(job.kernel_state, run_uninterrupted(job.kernel_seed, job.service_cycles));
            }
        }
        let again = run(&config).unwrap();
        prop_assert_eq!(again.timeline, out.timeline);
        prop_assert_eq!(again.report, out.report);
    }
}

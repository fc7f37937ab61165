//! Runs compared against independently computed expectations.

use serde::Deserialize;

use fps_core::engine::{run, JobTemplate, ScenarioConfig};
use fps_core::policies::{PolicyDescriptor, PolicyKind};
use fps_core::report::{render_csv, render_timeline};
use fps_core::JobId;

#[derive(Deserialize)]
struct Case {
    quantum_ns: u64,
    jobs: Vec<(String, u64, u64)>,
    makespan_ns: u64,
    /// (turnaround, waiting, switches) per job
    expected: Vec<(u64, u64, u32)>,
}

#[test]
fn single_slot_round_robin_cases() {
    let cases: Vec<Case> = serde_json::from_str(include_str!("golden/rr_single_slot.json")).unwrap();
    assert_eq!(cases.len(), 40);
    for (n, case) in cases.iter().enumerate() {
        let workload = case
            .jobs
            .iter()
            .map(|(benchmark, cycles, arrival_ns)| JobTemplate {
                arrival_ns: *arrival_ns,
                latency_cycles_override: Some(*cycles),
                ..JobTemplate::new(benchmark, 1)
            })
            .collect();
        let config = ScenarioConfig::new(
            "1-slot",
            workload,
            PolicyDescriptor::new(PolicyKind::RoundRobinPreemptive, Some(case.quantum_ns)),
        );
        let report = run(&config).unwrap().report;
        assert_eq!(report.makespan_ns, case.makespan_ns, "case {n}");
        for (i, &(turnaround, waiting, switches)) in case.expected.iter().enumerate() {
            let m = report.job(JobId(i as u32)).unwrap();
            assert_eq!((m.turnaround_ns, m.waiting_ns, m.switches), (turnaround, waiting, switches), "case {n} job {i}");
        }
    }
}

#[test]
fn scenario_ii_outputs_are_frozen() {
    let config = ScenarioConfig::from_json(include_str!("../data/scenarios/scenario-ii.json")).unwrap();
    let out = run(&config).unwrap();
    assert_eq!(render_csv(&out.report), include_str!("golden/scenario-ii.csv"));
    assert_eq!(render_timeline(&out.timeline), include_str!("golden/scenario-ii.timeline.jsonl"));
}

//! Per-job and aggregate metrics computed from a finished timeline, plus
//! CSV/JSON rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::switch_cost;
use crate::engine::{EventKind, Scenario, ScheduleEvent, SweepRun};
use crate::fabric::SlotId;
use crate::{JobId, Nanos};

pub const CSV_HEADER: &str =
    "job_id,benchmark,outcome,turnaround_ns,waiting_ns,service_ns,switches,switch_overhead_ns,overhead_pct";

pub const SWEEP_HEADER: &str = "quantum_ns,makespan_ns,total_overhead_ns,starved_count";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Completed,
    Starved,
    HorizonExceeded,
}

impl Outcome {
    fn as_str(self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Starved => "starved",
            Outcome::HorizonExceeded => "horizon-exceeded",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Outcome::Completed, Outcome::Starved, Outcome::HorizonExceeded].into_iter().find(|o| o.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobMetrics {
    pub job_id: JobId,
    pub benchmark: String,
    pub outcome: Outcome,
    /// Arrival to completion; for other outcomes, arrival to the end of the run.
    pub turnaround_ns: Nanos,
    /// Turnaround minus the job's own execution and switch intervals.
    pub waiting_ns: Nanos,
    pub service_ns: Nanos,
    pub switches: u32,
    pub switch_overhead_ns: Nanos,
    /// `switch_overhead_ns / service_ns` as a ratio.
    pub overhead_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotUsage {
    pub slot: SlotId,
    /// Execution plus save/reset/restore time.
    pub busy_ns: Nanos,
    /// The save/reset/restore part of `busy_ns`.
    pub overhead_ns: Nanos,
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimReport {
    pub jobs: Vec<JobMetrics>,
    pub makespan_ns: Nanos,
    pub total_switches: u64,
    pub total_overhead_ns: Nanos,
    pub slot_utilization: Vec<SlotUsage>,
    pub starved_count: u32,
}

impl SimReport {
    pub fn job(&self, id: JobId) -> Option<&JobMetrics> {
        self.jobs.iter().find(|j| j.job_id == id)
    }

    pub fn completed_count(&self) -> usize {
        self.jobs.iter().filter(|j| j.outcome == Outcome::Completed).count()
    }
}

#[derive(Default)]
struct Tally {
    arrived: Option<Nanos>,
    finished: Option<(Outcome, Nanos)>,
    executed: Nanos,
    overhead: Nanos,
    restores: u32,
}

pub fn summarize(timeline: &[ScheduleEvent], scenario: &Scenario) -> SimReport {
    let makespan_ns = timeline.iter().map(ScheduleEvent::end_ns).max().unwrap_or(0);
    let run_end = scenario.horizon_ns.map_or(makespan_ns, |h| h.max(makespan_ns));
    let mut tallies: BTreeMap<JobId, Tally> = BTreeMap::new();
    let mut slots: BTreeMap<SlotId, (Nanos, Nanos)> = scenario.fabric.slots.iter().map(|s| (s.id, (0, 0))).collect();

    for e in timeline {
        let t = tallies.entry(e.job).or_default();
        match e.kind {
            EventKind::Arrive => t.arrived = Some(e.at_ns),
            EventKind::Dispatch => t.executed += e.duration_ns,
            EventKind::Save | EventKind::Reset | EventKind::Restore => {
                t.overhead += e.duration_ns;
                if e.kind == EventKind::Restore {
                    t.restores += 1;
                }
            }
            EventKind::Complete => t.finished = Some((Outcome::Completed, e.at_ns)),
            EventKind::Starve => t.finished = Some((Outcome::Starved, e.at_ns)),
            EventKind::QuantumExpire => {}
        }
        if let Some(slot) = e.slot {
            let usage = slots.entry(slot).or_default();
            match e.kind {
                EventKind::Dispatch => usage.0 += e.duration_ns,
                EventKind::Save | EventKind::Reset | EventKind::Restore => {
                    usage.0 += e.duration_ns;
                    usage.1 += e.duration_ns;
                }
                _ => {}
            }
        }
    }

    let mut jobs = Vec::new();
    for spec in &scenario.jobs {
        let Some(t) = tallies.get(&spec.id) else {
            continue;
        };
        let Some(arrived) = t.arrived else {
            continue;
        };
        let (outcome, end) = t.finished.unwrap_or((Outcome::HorizonExceeded, run_end));
        let turnaround_ns = end - arrived;
        let switch_overhead_ns = u64::from(t.restores) * switch_cost(spec.frames, &scenario.cost_model);
        jobs.push(JobMetrics {
            job_id: spec.id,
            benchmark: spec.benchmark.clone(),
            outcome,
            turnaround_ns,
            waiting_ns: turnaround_ns.saturating_sub(t.executed + t.overhead),
            service_ns: spec.service_ns,
            switches: t.restores,
            switch_overhead_ns,
            overhead_pct: switch_overhead_ns as f64 / spec.service_ns as f64,
        });
    }

    let slot_utilization = slots
        .into_iter()
        .map(|(slot, (busy_ns, overhead_ns))| SlotUsage {
            slot,
            busy_ns,
            overhead_ns,
            utilization: if makespan_ns == 0 { 0.0 } else { busy_ns as f64 / makespan_ns as f64 },
        })
        .collect();

    SimReport {
        total_switches: jobs.iter().map(|j| u64::from(j.switches)).sum(),
        total_overhead_ns: jobs.iter().map(|j| j.switch_overhead_ns).sum(),
        starved_count: jobs.iter().filter(|j| j.outcome == Outcome::Starved).count() as u32,
        jobs,
        makespan_ns,
        slot_utilization,
    }
}

pub fn render_csv(report: &SimReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for j in &report.jobs {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            j.job_id,
            j.benchmark,
            j.outcome.as_str(),
            j.turnaround_ns,
            j.waiting_ns,
            j.service_ns,
            j.switches,
            j.switch_overhead_ns,
            j.overhead_pct
        )
        .expect("write to string");
    }
    out
}

pub fn render_json(report: &SimReport) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("report serializes");
    out.push('\n');
    out
}

pub fn render_timeline(events: &[ScheduleEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Parses the per-job rows written by [`render_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<JobMetrics>, ParseError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        _ => return Err(ParseError::Csv { line: 1, message: "missing or unexpected header".into() }),
    }
    let mut jobs = Vec::new();
    for (n, line) in lines {
        let err = |message: String| ParseError::Csv { line: n + 1, message };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(err(format!("expected 9 columns, found {}", cols.len())));
        }
        fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("bad {what}: '{s}'"))
        }
        let row = (|| -> Result<JobMetrics, String> {
            Ok(JobMetrics {
                job_id: JobId(num(cols[0], "job_id")?),
                benchmark: cols[1].to_string(),
                outcome: Outcome::parse(cols[2]).ok_or_else(|| format!("bad outcome: '{}'", cols[2]))?,
                turnaround_ns: num(cols[3], "turnaround_ns")?,
                waiting_ns: num(cols[4], "waiting_ns")?,
                service_ns: num(cols[5], "service_ns")?,
                switches: num(cols[6], "switches")?,
                switch_overhead_ns: num(cols[7], "switch_overhead_ns")?,
                overhead_pct: num(cols[8], "overhead_pct")?,
            })
        })();
        jobs.push(row.map_err(err)?);
    }
    Ok(jobs)
}

pub fn parse_json(text: &str) -> Result<SimReport, ParseError> {
    Ok(serde_json::from_str(text)?)
}

pub fn parse_timeline(text: &str) -> Result<Vec<ScheduleEvent>, ParseError> {
    text.lines().filter(|l| !l.is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// One summary row per successful sweep run; failed runs are left out.
pub fn render_sweep_csv(runs: &[SweepRun]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for run in runs {
        if let Ok(output) = &run.result {
            let r = &output.report;
            writeln!(out, "{},{},{},{}", run.quantum_ns, r.makespan_ns, r.total_overhead_ns, r.starved_count)
                .expect("write to string");
        }
    }
    out
}

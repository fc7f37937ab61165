use std::thread;

use super::{run_with, ConfigError, RunOptions, ScenarioConfig, SimError, SimOutput};
use crate::catalog::BenchmarkSpec;
use crate::Nanos;

#[derive(Debug)]
pub struct SweepRun {
    pub quantum_ns: Nanos,
    pub result: Result<SimOutput, SimError>,
}

/// Runs `config` once per quantum, each run on its own thread. Results come
/// back in the order of `quanta`.
pub fn sweep(config: &ScenarioConfig, catalog: &[BenchmarkSpec], quanta: &[Nanos]) -> Result<Vec<SweepRun>, ConfigError> {
    if quanta.is_empty() {
        return Err(ConfigError::EmptyQuantumList);
    }
    let options = RunOptions::default();
    let runs = thread::scope(|scope| {
        let handles: Vec<_> = quanta
            .iter()
            .map(|&q| {
                let mut config = config.clone();
                config.policy.quantum_ns = Some(q);
                let options = &options;
                scope.spawn(move || SweepRun { quantum_ns: q, result: run_with(&config, catalog, options) })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    Ok(runs)
}

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use fps_core::catalog::{self, BenchmarkSpec};
use fps_core::engine::{self, RunOptions, ScenarioConfig, SimError, SimOutput};
use fps_core::report::{self, Outcome};
use fps_core::verify::{self, VerifyConfig, VerifyError};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_STARVED: u8 = 3;

#[derive(Parser)]
#[command(name = "fps", version, about = "Multi-tenant FPGA preemptive scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List catalog entries.
    CatalogList {
        /// Use a catalog file instead of the builtin one.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Show one catalog entry.
    CatalogShow {
        name: String,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Run a scenario file.
    Simulate {
        scenario: PathBuf,
        /// Report path; `.json` selects JSON, anything else CSV. Defaults to CSV on stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the event timeline (one JSON object per line).
        #[arg(long)]
        timeline: Option<PathBuf>,
        /// Exit with status 3 if any job starved.
        #[arg(long)]
        fail_on_starvation: bool,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Check that save/reset/restore leaves the chained kernel unchanged.
    Verify {
        #[arg(long, default_value_t = 100_000)]
        steps: u64,
        #[arg(long, default_value_t = 10)]
        preemptions: u64,
        #[arg(long, default_value_t = 100)]
        trials: u32,
        #[arg(long)]
        seed: Option<u64>,
        /// Corrupt one sealed context per trial and require every corruption to be caught.
        #[arg(long)]
        tamper: bool,
    },
    /// Run a scenario once per quantum.
    Sweep {
        scenario: PathBuf,
        /// Comma-separated quanta in nanoseconds.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        quantum_list: Vec<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        fail_on_starvation: bool,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

/// An error carrying the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_CONFIG, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: EXIT_FAILURE, error }
    }
}

impl From<SimError> for Failure {
    fn from(error: SimError) -> Self {
        match error {
            SimError::Config(e) => Failure::config(e),
            other => Failure::from(anyhow::Error::from(other)),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("fps: {error:#}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(command: Command) -> Result<u8, Failure> {
    match command {
        Command::CatalogList { catalog } => {
            let catalog = load_catalog(catalog.as_deref())?;
            print!("{}", catalog_table(&catalog));
            Ok(0)
        }
        Command::CatalogShow { name, catalog } => {
            let catalog = load_catalog(catalog.as_deref())?;
            let spec = catalog::find(&catalog, &name).ok_or_else(|| anyhow!("no catalog entry named '{name}'"))?;
            print!("{}", describe(spec));
            Ok(0)
        }
        Command::Simulate { scenario, out, timeline, fail_on_starvation, catalog } => {
            let catalog = load_catalog(catalog.as_deref())?;
            let config = load_scenario(&scenario)?;
            let output = engine::run_with(&config, &catalog, &RunOptions::default())?;
            match &out {
                Some(path) => write_atomic(path, &render_report(&output, path))?,
                None => print!("{}", report::render_csv(&output.report)),
            }
            if let Some(path) = &timeline {
                write_atomic(path, &report::render_timeline(&output.timeline))?;
            }
            Ok(starvation_code(&output, fail_on_starvation))
        }
        Command::Verify { steps, preemptions, trials, seed, tamper } => {
            let seed = match seed {
                Some(s) => s,
                None => env_seed()?.unwrap_or(0),
            };
            let config = VerifyConfig { steps, preemptions, trials, seed, tamper };
            let summary = verify::run_trials(&config).map_err(|e| match e {
                VerifyError::InvalidPlan(_) => Failure::config(e),
                other => Failure::from(anyhow::Error::from(other)),
            })?;
            if tamper {
                println!("trials={} tamper_detected={} tamper_missed={}", summary.trials, summary.tamper_detected, summary.tamper_missed);
            } else {
                println!("trials={} matched={} mismatched={}", summary.trials, summary.matched, summary.mismatched);
            }
            Ok(if summary.passed() { 0 } else { EXIT_FAILURE })
        }
        Command::Sweep { scenario, quantum_list, out_dir, fail_on_starvation, catalog } => {
            let catalog = load_catalog(catalog.as_deref())?;
            let config = load_scenario(&scenario)?;
            let runs = engine::sweep(&config, &catalog, &quantum_list).map_err(Failure::config)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let mut worst = 0;
            for run in &runs {
                let code = match &run.result {
                    Ok(output) => {
                        let path = out_dir.join(format!("report-q{}.csv", run.quantum_ns));
                        write_atomic(&path, &report::render_csv(&output.report))?;
                        starvation_code(output, fail_on_starvation)
                    }
                    Err(e) => {
                        eprintln!("fps: quantum {} ns: {e}", run.quantum_ns);
                        match e {
                            SimError::Config(_) => EXIT_CONFIG,
                            _ => EXIT_FAILURE,
                        }
                    }
                };
                worst = worst.max(code);
            }
            write_atomic(&out_dir.join("summary.csv"), &report::render_sweep_csv(&runs))?;
            Ok(worst)
        }
    }
}

fn starvation_code(output: &SimOutput, fail_on_starvation: bool) -> u8 {
    let starved = output.report.jobs.iter().any(|j| j.outcome == Outcome::Starved);
    if fail_on_starvation && starved {
        EXIT_STARVED
    } else {
        0
    }
}

fn render_report(output: &SimOutput, path: &Path) -> String {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("json") => report::render_json(&output.report),
        _ => report::render_csv(&output.report),
    }
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var("FPS_SEED") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::config(anyhow!("FPS_SEED is not a 64-bit integer: '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = ScenarioConfig::from_json(&text)
        .map_err(|e| Failure::config(anyhow::Error::from(e).context(path.display().to_string())))?;
    if let Some(seed) = env_seed()? {
        config.seed = seed;
    }
    Ok(config)
}

fn load_catalog(path: Option<&Path>) -> Result<Vec<BenchmarkSpec>, Failure> {
    let Some(path) = path else {
        return Ok(catalog::builtin_catalog());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    catalog::load_catalog(&text).map_err(|e| Failure::config(anyhow::Error::from(e).context(path.display().to_string())))
}

/// Writes next to the destination, then renames over it.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| anyhow!("not a file path: {}", path.display()))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| -> Result<()> {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(contents.as_bytes())?;
        file.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

fn latency(spec: &BenchmarkSpec) -> String {
    spec.latency_cycles.map_or_else(|| "-".to_string(), |c| c.to_string())
}

fn catalog_table(catalog: &[BenchmarkSpec]) -> String {
    let mut out = format!(
        "{:<30} {:<30} {:<15} {:>6} {:>6} {:>5} {:>5} {:>8}\n",
        "KEY", "NAME", "KIND", "LUTS", "FFS", "BRAMS", "DSPS", "CYCLES"
    );
    for s in catalog {
        let r = s.resources;
        let kind = match s.kind {
            catalog::BenchmarkKind::PlAccelerator => "pl-accelerator",
            catalog::BenchmarkKind::RiscvSoftcore => "riscv-softcore",
        };
        out.push_str(&format!(
            "{:<30} {:<30} {:<15} {:>6} {:>6} {:>5} {:>5} {:>8}\n",
            s.key,
            s.name,
            kind,
            r.luts,
            r.ffs,
            r.brams,
            r.dsps,
            latency(s)
        ));
    }
    out
}

fn describe(s: &BenchmarkSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!("key:        {}\n", s.key));
    out.push_str(&format!("name:       {}\n", s.name));
    out.push_str(&format!("kind:       {:?}\n", s.kind));
    out.push_str(&format!("domain:     {:?}\n", s.domain_class));
    out.push_str(&format!("resources:  {}\n", s.resources));
    out.push_str(&format!("clock_mhz:  {}\n", s.clock_mhz));
    out.push_str(&format!("latency:    {}\n", latency(s)));
    out.push_str(&format!("provenance: {:?}\n", s.latency_provenance));
    if let Some(kb) = s.code_size_kb {
        out.push_str(&format!("code_kb:    {kb}\n"));
    }
    out
}

//! Benchmark catalog: the bundled 27-entry dataset and ingestion of
//! user-supplied catalogs.
//!
//! Catalog documents are JSON lists of objects with the keys
//! `name`, `kind`, `domain_class`, `resources{luts,ffs,brams,dsps}` and the
//! optional `latency_cycles`, `clock_mhz` and `code_size_kb`. Unknown keys are
//! rejected.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::{self, FabricConfig};

const BUILTIN_DOCUMENT: &str = include_str!("../data/catalog.json");

/// The only latencies published as exact cycle counts.
/// Entries matching one of these exactly are tagged [`LatencyProvenance::Published`].
const PUBLISHED_LATENCIES: &[(&str, u64)] = &[("ml-kem-server", 34_806), ("h-264-encoder", 171_029)];

pub const MIN_CLOCK_MHZ: f64 = 50.0;
pub const MAX_CLOCK_MHZ: f64 = 100.0;
pub const DEFAULT_CLOCK_MHZ: f64 = 100.0;

/// LUT/FF/BRAM/DSP footprint or capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceVector {
    pub luts: u32,
    pub ffs: u32,
    pub brams: u32,
    pub dsps: u32,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector::new(0, 0, 0, 0);

    pub const fn new(luts: u32, ffs: u32, brams: u32, dsps: u32) -> Self {
        Self { luts, ffs, brams, dsps }
    }

    /// Componentwise `self <= other`.
    pub fn le_componentwise(&self, other: &ResourceVector) -> bool {
        self.luts <= other.luts
            && self.ffs <= other.ffs
            && self.brams <= other.brams
            && self.dsps <= other.dsps
    }

    pub(crate) fn as_tuple(&self) -> (u32, u32, u32, u32) {
        (self.luts, self.ffs, self.brams, self.dsps)
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.luts, self.ffs, self.brams, self.dsps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkKind {
    PlAccelerator,
    RiscvSoftcore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainClass {
    VideoProcessing,
    Communication,
    Cryptography,
    SignalProcessing,
    Computational,
    MachineLearning,
    DatabaseOps,
    PatternRecognition,
    PerformanceBenchmark,
}

/// Where an entry's latency came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatencyProvenance {
    /// A published exact cycle count (ML-KEM Server, H.264 Encoder).
    Published,
    /// Supplied by a user catalog or scenario, or still to be supplied.
    UserSupplied,
}

/// One catalog entry.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    /// Stable kebab-case identifier derived from `name`.
    pub key: String,
    /// Display name as it appears in the resource tables.
    pub name: String,
    pub kind: BenchmarkKind,
    pub domain_class: DomainClass,
    pub resources: ResourceVector,
    /// Clock cycles per execution, when known.
    pub latency_cycles: Option<u64>,
    pub clock_mhz: f64,
    /// Firmware size for RISC-V soft-core entries.
    pub code_size_kb: Option<u32>,
    pub latency_provenance: LatencyProvenance,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("malformed catalog document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid catalog entry at {path}: {message}")]
    Validation { path: String, message: String },
}

/// Non-fatal findings reported by [`validate_spec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CatalogWarning {
    /// The footprint exceeds every slot of the fabric in at least one component.
    NoFittingSlot { benchmark: String, fabric: String },
}

impl fmt::Display for CatalogWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CatalogWarning::NoFittingSlot { benchmark, fabric } => {
                write!(f, "{benchmark}: no slot of fabric '{fabric}' can host this footprint")
            }
        }
    }
}

/// Normalizes a display name into a kebab-case key, e.g. `"H.264 Encoder"`
/// becomes `"h-264-encoder"`.
pub fn normalize_key(name: &str) -> String {
    let mut key = String::with_capacity(name.len());
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            key.push(ch.to_ascii_lowercase());
        } else if !key.is_empty() && !key.ends_with('-') {
            key.push('-');
        }
    }
    while key.ends_with('-') {
        key.pop();
    }
    key
}

/// The bundled 27-entry catalog (15 PL accelerators, 12 RISC-V soft cores).
pub fn builtin_catalog() -> Vec<BenchmarkSpec> {
    static BUILTIN: OnceLock<Vec<BenchmarkSpec>> = OnceLock::new();
    BUILTIN
        .get_or_init(|| load_catalog(BUILTIN_DOCUMENT).expect("bundled catalog is valid"))
        .clone()
}

/// The bundled catalog document, verbatim.
pub fn builtin_document() -> &'static str {
    BUILTIN_DOCUMENT
}

/// Looks up an entry by key or by display name.
pub fn find<'a>(catalog: &'a [BenchmarkSpec], name: &str) -> Option<&'a BenchmarkSpec> {
    let key = normalize_key(name);
    catalog.iter().find(|spec| spec.key == key)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResources {
    luts: i64,
    ffs: i64,
    brams: i64,
    dsps: i64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    name: String,
    kind: BenchmarkKind,
    domain_class: DomainClass,
    resources: RawResources,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latency_cycles: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clock_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    code_size_kb: Option<i64>,
}

fn invalid(path: String, message: impl Into<String>) -> CatalogError {
    CatalogError::Validation { path, message: message.into() }
}

fn count_field(path: &str, field: &str, value: i64) -> Result<u32, CatalogError> {
    u32::try_from(value).map_err(|_| {
        invalid(format!("{path}.{field}"), format!("{field} must be a non-negative count, got {value}"))
    })
}

impl RawEntry {
    fn into_spec(self, index: usize) -> Result<BenchmarkSpec, CatalogError> {
        let path = format!("[{index}]");
        let key = normalize_key(&self.name);
        if key.is_empty() {
            return Err(invalid(format!("{path}.name"), "name must contain alphanumeric characters"));
        }
        let rpath = format!("{path}.resources");
        let resources = ResourceVector {
            luts: count_field(&rpath, "luts", self.resources.luts)?,
            ffs: count_field(&rpath, "ffs", self.resources.ffs)?,
            brams: count_field(&rpath, "brams", self.resources.brams)?,
            dsps: count_field(&rpath, "dsps", self.resources.dsps)?,
        };
        let latency_cycles = match self.latency_cycles {
            None => None,
            Some(c) if c > 0 => Some(c as u64),
            Some(c) => {
                return Err(invalid(
                    format!("{path}.latency_cycles"),
                    format!("latency_cycles must be positive, got {c}"),
                ))
            }
        };
        let clock_mhz = self.clock_mhz.unwrap_or(DEFAULT_CLOCK_MHZ);
        if !(MIN_CLOCK_MHZ..=MAX_CLOCK_MHZ).contains(&clock_mhz) {
            return Err(invalid(
                format!("{path}.clock_mhz"),
                format!("clock_mhz must lie in [{MIN_CLOCK_MHZ}, {MAX_CLOCK_MHZ}], got {clock_mhz}"),
            ));
        }
        let code_size_kb = match (self.kind, self.code_size_kb) {
            (BenchmarkKind::RiscvSoftcore, None) => {
                return Err(invalid(format!("{path}.code_size_kb"), "RISC-V entries require code_size_kb"))
            }
            (BenchmarkKind::RiscvSoftcore, Some(kb)) if kb > 0 => Some(kb as u32),
            (BenchmarkKind::RiscvSoftcore, Some(kb)) => {
                return Err(invalid(
                    format!("{path}.code_size_kb"),
                    format!("code_size_kb must be positive, got {kb}"),
                ))
            }
            (BenchmarkKind::PlAccelerator, Some(_)) => {
                return Err(invalid(
                    format!("{path}.code_size_kb"),
                    "PL accelerators carry no code_size_kb",
                ))
            }
            (BenchmarkKind::PlAccelerator, None) => None,
        };
        let latency_provenance = match latency_cycles {
            Some(c) if PUBLISHED_LATENCIES.contains(&(key.as_str(), c)) => LatencyProvenance::Published,
            _ => LatencyProvenance::UserSupplied,
        };
        Ok(BenchmarkSpec {
            key,
            name: self.name,
            kind: self.kind,
            domain_class: self.domain_class,
            resources,
            latency_cycles,
            clock_mhz,
            code_size_kb,
            latency_provenance,
        })
    }
}

/// Parses and validates a catalog document.
pub fn load_catalog(source: &str) -> Result<Vec<BenchmarkSpec>, CatalogError> {
    let raw: Vec<RawEntry> = serde_json::from_str(source)?;
    let mut seen = BTreeSet::new();
    let mut specs = Vec::with_capacity(raw.len());
    for (index, entry) in raw.into_iter().enumerate() {
        let spec = entry.into_spec(index)?;
        if !seen.insert(spec.key.clone()) {
            return Err(invalid(
                format!("[{index}].name"),
                format!("duplicate benchmark key '{}'", spec.key),
            ));
        }
        specs.push(spec);
    }
    Ok(specs)
}

/// Renders a catalog back into the document schema accepted by [`load_catalog`].
pub fn render_catalog(catalog: &[BenchmarkSpec]) -> String {
    let raw: Vec<RawEntry> = catalog
        .iter()
        .map(|spec| RawEntry {
            name: spec.name.clone(),
            kind: spec.kind,
            domain_class: spec.domain_class,
            resources: RawResources {
                luts: spec.resources.luts.into(),
                ffs: spec.resources.ffs.into(),
                brams: spec.resources.brams.into(),
                dsps: spec.resources.dsps.into(),
            },
            latency_cycles: spec.latency_cycles.map(|c| c as i64),
            clock_mhz: Some(spec.clock_mhz),
            code_size_kb: spec.code_size_kb.map(i64::from),
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&raw).expect("catalog serialization cannot fail");
    out.push('\n');
    out
}

/// Reports footprints that no slot of `fabric` can ever host.
pub fn validate_spec(spec: &BenchmarkSpec, fabric: &FabricConfig) -> Vec<CatalogWarning> {
    if fabric.slots.iter().any(|slot| fabric::fits(&spec.resources, &slot.capacity)) {
        Vec::new()
    } else {
        vec![CatalogWarning::NoFittingSlot { benchmark: spec.key.clone(), fabric: fabric.name.clone() }]
    }
}

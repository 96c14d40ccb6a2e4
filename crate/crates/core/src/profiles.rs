//! Hardware, grid, datacenter and workload descriptions, and the manifest
//! format they are loaded from.
//!
//! A manifest is a TOML document with a mandatory `schema = 1` header.
//! Profiles declared in a manifest shadow the built-in registry; every
//! reference must resolve and unknown keys are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operational::{IdleMethod, PartitionPowerModes};
use crate::report::{ComparisonRow, FieldValue};
use crate::units::{CarbonIntensity, CarbonMass, Duration, Energy, Power};

pub const SCHEMA_VERSION: u32 = 1;

/// Relative slack allowed when checking `gpu_hours <= wall_clock * gpu_count`.
pub const GPU_HOURS_SLACK: f64 = 1.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HardwareKind {
    Server,
    Accelerator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    pub name: String,
    pub kind: HardwareKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdp: Option<Power>,
    pub embodied: CarbonMass,
    pub lifetime_years: f64,
    pub avg_usage_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accelerators_per_server: Option<u32>,
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<()> {
        let who = format!("hardware `{}`", self.name);
        if !(self.lifetime_years.is_finite() && self.lifetime_years > 0.0) {
            return Err(Error::Invariant(format!(
                "{who}: lifetime_years > 0 (got {})",
                self.lifetime_years
            )));
        }
        if !(self.avg_usage_fraction > 0.0 && self.avg_usage_fraction <= 1.0) {
            return Err(Error::Invariant(format!(
                "{who}: 0 < avg_usage_fraction <= 1 (got {})",
                self.avg_usage_fraction
            )));
        }
        match (self.kind, self.accelerators_per_server) {
            (HardwareKind::Accelerator, Some(_)) => Err(Error::Invariant(format!(
                "{who}: accelerators_per_server is only valid for servers"
            ))),
            (HardwareKind::Server, Some(0)) => Err(Error::Invariant(format!(
                "{who}: accelerators_per_server > 0"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridProfile {
    pub region: String,
    pub intensity: CarbonIntensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatacenterProfile {
    pub name: String,
    pub pue: f64,
}

impl DatacenterProfile {
    pub fn validate(&self) -> Result<()> {
        if self.pue.is_finite() && self.pue >= 1.0 {
            Ok(())
        } else {
            Err(Error::Invariant(format!(
                "datacenter `{}`: pue >= 1 (got {})",
                self.name, self.pue
            )))
        }
    }
}

/// Measured average power of a cluster partition in its three operating modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionProfile {
    pub name: String,
    pub infrastructure: Power,
    pub idle: Power,
    pub dynamic: Power,
}

impl PartitionProfile {
    pub fn modes(&self) -> PartitionPowerModes {
        PartitionPowerModes::new(self.infrastructure, self.idle, self.dynamic)
    }
}

/// Named profile collections. Lookups are by exact name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registries {
    pub hardware: Vec<HardwareProfile>,
    pub grids: Vec<GridProfile>,
    pub datacenters: Vec<DatacenterProfile>,
    pub partitions: Vec<PartitionProfile>,
}

fn upsert<T: Clone>(list: &mut Vec<T>, item: T, key: impl Fn(&T) -> &str) {
    match list.iter_mut().find(|x| key(x) == key(&item)) {
        Some(slot) => *slot = item,
        None => list.push(item),
    }
}

impl Registries {
    pub fn hardware(&self, name: &str) -> Result<&HardwareProfile> {
        self.hardware
            .iter()
            .find(|h| h.name == name)
            .ok_or_else(|| not_found("hardware profile", name))
    }

    pub fn grid(&self, region: &str) -> Result<&GridProfile> {
        self.grids
            .iter()
            .find(|g| g.region == region)
            .ok_or_else(|| not_found("grid region", region))
    }

    pub fn datacenter(&self, name: &str) -> Result<&DatacenterProfile> {
        self.datacenters
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| not_found("datacenter", name))
    }

    pub fn partition(&self, name: &str) -> Result<&PartitionProfile> {
        self.partitions
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| not_found("partition", name))
    }

    /// Adds or replaces profiles from `other`.
    pub fn merge(&mut self, other: Registries) {
        for h in other.hardware {
            upsert(&mut self.hardware, h, |x| &x.name);
        }
        for g in other.grids {
            upsert(&mut self.grids, g, |x| &x.region);
        }
        for d in other.datacenters {
            upsert(&mut self.datacenters, d, |x| &x.name);
        }
        for p in other.partitions {
            upsert(&mut self.partitions, p, |x| &x.name);
        }
    }

    pub fn validate(&self) -> Result<()> {
        unique(self.hardware.iter().map(|h| h.name.as_str()), "hardware")?;
        unique(self.grids.iter().map(|g| g.region.as_str()), "grid")?;
        unique(
            self.datacenters.iter().map(|d| d.name.as_str()),
            "datacenter",
        )?;
        unique(self.partitions.iter().map(|p| p.name.as_str()), "partition")?;
        for h in &self.hardware {
            h.validate()?;
        }
        for d in &self.datacenters {
            d.validate()?;
        }
        Ok(())
    }

    /// Reads every `*.toml` file in `dir` (sorted by file name) as a profile document.
    pub fn load_dir(dir: &Path) -> Result<Registries> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "toml"))
            .collect();
        paths.sort();
        let mut out = Registries::default();
        for path in paths {
            let text = fs::read_to_string(&path)?;
            let doc: ProfileDoc =
                toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
            let regs = doc.into_registries();
            regs.validate()?;
            out.merge(regs);
        }
        Ok(out)
    }
}

fn not_found(kind: &'static str, name: &str) -> Error {
    Error::NotFound {
        kind,
        name: name.to_string(),
    }
}

fn unique<'a>(names: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::Invariant(format!("{what} name `{n}` is not unique")));
        }
    }
    Ok(())
}

/// Profiles shipped with the library.
pub fn builtin_profiles() -> Registries {
    let mass = |kg: f64| CarbonMass::from_kg(kg).expect("static");
    let watts = |w: f64| Power::from_watts(w).expect("static");
    let accel = |name: &str, tdp: Option<f64>| HardwareProfile {
        name: name.to_string(),
        kind: HardwareKind::Accelerator,
        tdp: tdp.map(watts),
        embodied: mass(150.0),
        lifetime_years: 6.0,
        avg_usage_fraction: 0.85,
        accelerators_per_server: None,
    };
    let grid = |region: &str, g: f64| GridProfile {
        region: region.to_string(),
        intensity: CarbonIntensity::from_g_per_kwh(g).expect("static"),
    };
    let dc = |name: &str, pue: f64| DatacenterProfile {
        name: name.to_string(),
        pue,
    };
    Registries {
        hardware: vec![
            accel("a100-80gb", Some(400.0)),
            // vendor datasheet figure, used for cross-checks only
            accel("v100-32gb", Some(300.0)),
            accel("generic-accelerator", None),
            HardwareProfile {
                name: "hpe-apollo-6500".to_string(),
                kind: HardwareKind::Server,
                tdp: None,
                embodied: mass(2500.0),
                lifetime_years: 6.0,
                avg_usage_fraction: 0.85,
                accelerators_per_server: Some(8),
            },
        ],
        grids: vec![grid("fr", 57.0), grid("us-central1", 394.0)],
        datacenters: vec![
            dc("jean-zay", 1.2),
            dc("azure-gpt-3", 1.1),
            dc("google-gopher", 1.08),
            dc("meta-opt", 1.09),
        ],
        partitions: vec![PartitionProfile {
            name: "jean-zay-a100".to_string(),
            infrastructure: Power::from_kw(27.0).expect("static"),
            idle: Power::from_kw(64.0).expect("static"),
            dynamic: Power::from_kw(109.0).expect("static"),
        }],
    }
}

/// A training run with every reference resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub name: String,
    /// Accelerator-hours summed over devices.
    pub gpu_hours: Duration,
    pub wall_clock: Duration,
    pub gpu_count: u32,
    pub node_count: u32,
    /// Taken from the server profile or derived as `gpu_count / node_count`.
    pub accelerators_per_server: u32,
    pub utilization: f64,
    pub idle_method: IdleMethod,
    pub accelerator: HardwareProfile,
    pub server: HardwareProfile,
    pub grid: GridProfile,
    pub datacenter: Option<DatacenterProfile>,
    pub partition: Option<PartitionProfile>,
}

/// A pre-measured energy line item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Process {
    pub name: String,
    pub energy: Energy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
}

/// Aggregate device-hours on one hardware pair, used for workshop-wide estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub accelerator: HardwareProfile,
    pub server: HardwareProfile,
    pub gpu_hours: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdleSource {
    /// `(infrastructure + idle) / dynamic` of the workshop partition.
    Fractional,
    /// Idle-to-dynamic mass ratio of the reference run.
    ReferenceRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workshop {
    pub allocations: Vec<Allocation>,
    pub partition: Option<PartitionProfile>,
    pub reference_run: Option<String>,
    pub idle_source: IdleSource,
    pub reported_grand_total: Option<CarbonMass>,
    pub reported_embodied_plus_idle: Option<CarbonMass>,
    /// Stated total device-hours, checked against the allocations.
    pub reported_gpu_hours: Option<Duration>,
}

/// A published figure kept alongside computed totals for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportedFigure {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<Energy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<CarbonMass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceInputs {
    pub power: String,
    pub requests: String,
    pub grid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pue: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_minutes: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Project {
    pub name: String,
    pub default_grid: Option<GridProfile>,
    pub runs: Vec<TrainingRun>,
    pub processes: Vec<Process>,
    pub comparisons: Vec<ComparisonRow>,
    pub workshop: Option<Workshop>,
    pub reported: Vec<ReportedFigure>,
    pub inference: Option<InferenceInputs>,
    /// Every profile declared in, or referenced by, the manifest.
    pub profiles: Registries,
}

impl Project {
    pub fn run(&self, name: &str) -> Result<&TrainingRun> {
        self.runs
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| not_found("run", name))
    }

    /// Grid for a process line item: its own region, else the project default.
    pub fn process_grid(&self, process: &Process) -> Result<GridProfile> {
        match &process.grid {
            Some(region) => self.profiles.grid(region).cloned(),
            None => self.default_grid.clone().ok_or_else(|| Error::Unresolved {
                kind: "grid",
                name: "<default_grid>".to_string(),
                context: format!(" for process `{}`", process.name),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Manifest documents

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    hardware: Vec<HardwareProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    grid: Vec<GridProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    datacenter: Vec<DatacenterProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    partition: Vec<PartitionProfile>,
}

impl ProfileDoc {
    fn into_registries(self) -> Registries {
        Registries {
            hardware: self.hardware,
            grids: self.grid,
            datacenters: self.datacenter,
            partitions: self.partition,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunDoc {
    name: String,
    gpu_hours: Duration,
    wall_clock: Duration,
    gpu_count: u32,
    node_count: u32,
    accelerator: String,
    server: String,
    grid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    datacenter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    partition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    utilization: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    idle_method: Option<IdleMethod>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComparisonDoc {
    model: String,
    parameters: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pue: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intensity: Option<CarbonIntensity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    energy: Option<Energy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emissions: Option<CarbonMass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emissions_with_pue: Option<CarbonMass>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    energy_includes_pue: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AllocationDoc {
    accelerator: String,
    server: String,
    gpu_hours: Duration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkshopDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    partition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_run: Option<String>,
    #[serde(default = "default_idle_source")]
    idle_source: IdleSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reported_grand_total: Option<CarbonMass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reported_embodied_plus_idle: Option<CarbonMass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reported_gpu_hours: Option<Duration>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    allocation: Vec<AllocationDoc>,
}

fn default_idle_source() -> IdleSource {
    IdleSource::Fractional
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    schema: u32,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default_grid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inference: Option<InferenceInputs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    workshop: Option<WorkshopDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    hardware: Vec<HardwareProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    grid: Vec<GridProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    datacenter: Vec<DatacenterProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    partition: Vec<PartitionProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    run: Vec<RunDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    process: Vec<Process>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    comparison: Vec<ComparisonDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    reported: Vec<ReportedFigure>,
}

/// Collects the profiles a manifest declares or references, in first-seen order.
struct Resolver<'a> {
    available: &'a Registries,
    used: Registries,
}

impl<'a> Resolver<'a> {
    fn hardware(&mut self, name: &str, ctx: &str) -> Result<HardwareProfile> {
        let h = self
            .available
            .hardware(name)
            .map_err(|_| unresolved("hardware", name, ctx))?
            .clone();
        upsert(&mut self.used.hardware, h.clone(), |x| &x.name);
        Ok(h)
    }

    fn grid(&mut self, region: &str, ctx: &str) -> Result<GridProfile> {
        let g = self
            .available
            .grid(region)
            .map_err(|_| unresolved("grid", region, ctx))?
            .clone();
        upsert(&mut self.used.grids, g.clone(), |x| &x.region);
        Ok(g)
    }

    fn datacenter(&mut self, name: &str, ctx: &str) -> Result<DatacenterProfile> {
        let d = self
            .available
            .datacenter(name)
            .map_err(|_| unresolved("datacenter", name, ctx))?
            .clone();
        upsert(&mut self.used.datacenters, d.clone(), |x| &x.name);
        Ok(d)
    }

    fn partition(&mut self, name: &str, ctx: &str) -> Result<PartitionProfile> {
        let p = self
            .available
            .partition(name)
            .map_err(|_| unresolved("partition", name, ctx))?
            .clone();
        upsert(&mut self.used.partitions, p.clone(), |x| &x.name);
        Ok(p)
    }
}

fn unresolved(kind: &'static str, name: &str, ctx: &str) -> Error {
    Error::Unresolved {
        kind,
        name: name.to_string(),
        context: format!(" in {ctx}"),
    }
}

/// Loads a manifest against the built-in profiles.
pub fn load_manifest<R: Read>(source: R) -> Result<Project> {
    load_manifest_with(source, "<manifest>", &builtin_profiles())
}

pub fn load_manifest_file(path: &Path, base: &Registries) -> Result<Project> {
    let file = fs::File::open(path)?;
    load_manifest_with(file, &path.display().to_string(), base)
}

/// Loads a manifest, resolving references against `base` shadowed by the
/// manifest's own profile declarations.
pub fn load_manifest_with<R: Read>(
    mut source: R,
    source_name: &str,
    base: &Registries,
) -> Result<Project> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let doc: ManifestDoc = toml::from_str(&text).map_err(|e| Error::parse(source_name, e))?;
    if doc.schema != SCHEMA_VERSION {
        return Err(Error::parse(
            source_name,
            format!(
                "unsupported schema {} (expected {SCHEMA_VERSION})",
                doc.schema
            ),
        ));
    }
    resolve(doc, base)
}

fn resolve(doc: ManifestDoc, base: &Registries) -> Result<Project> {
    let declared = Registries {
        hardware: doc.hardware,
        grids: doc.grid,
        datacenters: doc.datacenter,
        partitions: doc.partition,
    };
    declared.validate()?;
    let mut available = base.clone();
    available.merge(declared.clone());

    let mut r = Resolver {
        available: &available,
        used: declared,
    };

    let default_grid = doc
        .default_grid
        .as_deref()
        .map(|g| r.grid(g, "default_grid"))
        .transpose()?;

    let mut runs = Vec::with_capacity(doc.run.len());
    for run in &doc.run {
        runs.push(resolve_run(run, &mut r)?);
    }
    unique(runs.iter().map(|x| x.name.as_str()), "run")?;
    unique(doc.process.iter().map(|p| p.name.as_str()), "process")?;
    for p in &doc.process {
        if let Some(g) = &p.grid {
            r.grid(g, &format!("process `{}`", p.name))?;
        }
    }

    let mut comparisons = Vec::with_capacity(doc.comparison.len());
    for c in doc.comparison {
        comparisons.push(ComparisonRow {
            model: c.model,
            parameters: c.parameters,
            pue: c.pue.map(FieldValue::reported),
            intensity: c.intensity.map(FieldValue::reported),
            energy: c.energy.map(FieldValue::reported),
            emissions: c.emissions.map(FieldValue::reported),
            emissions_with_pue: c.emissions_with_pue.map(FieldValue::reported),
            energy_includes_pue: c.energy_includes_pue,
            flags: Vec::new(),
        });
    }
    unique(
        comparisons.iter().map(|c| c.model.as_str()),
        "comparison model",
    )?;

    let workshop = doc
        .workshop
        .map(|w| -> Result<Workshop> {
            let mut allocations = Vec::new();
            for a in &w.allocation {
                let accelerator = r.hardware(&a.accelerator, "workshop allocation")?;
                let server = r.hardware(&a.server, "workshop allocation")?;
                expect_kind(
                    &accelerator,
                    HardwareKind::Accelerator,
                    "workshop allocation",
                )?;
                expect_kind(&server, HardwareKind::Server, "workshop allocation")?;
                allocations.push(Allocation {
                    accelerator,
                    server,
                    gpu_hours: a.gpu_hours,
                });
            }
            let partition = w
                .partition
                .as_deref()
                .map(|p| r.partition(p, "workshop"))
                .transpose()?;
            if let Some(name) = &w.reference_run {
                if !runs.iter().any(|x| &x.name == name) {
                    return Err(unresolved("run", name, "workshop"));
                }
            }
            Ok(Workshop {
                allocations,
                partition,
                reference_run: w.reference_run,
                idle_source: w.idle_source,
                reported_grand_total: w.reported_grand_total,
                reported_embodied_plus_idle: w.reported_embodied_plus_idle,
                reported_gpu_hours: w.reported_gpu_hours,
            })
        })
        .transpose()?;

    if let Some(inf) = &doc.inference {
        r.grid(&inf.grid, "inference")?;
        if let Some(pue) = inf.pue {
            if !(pue.is_finite() && pue >= 1.0) {
                return Err(Error::Invariant(format!("inference: pue >= 1 (got {pue})")));
            }
        }
    }

    Ok(Project {
        name: doc.name,
        default_grid,
        runs,
        processes: doc.process,
        comparisons,
        workshop,
        reported: doc.reported,
        inference: doc.inference,
        profiles: r.used,
    })
}

fn expect_kind(h: &HardwareProfile, kind: HardwareKind, ctx: &str) -> Result<()> {
    if h.kind == kind {
        Ok(())
    } else {
        Err(Error::Invariant(format!(
            "{ctx}: `{}` must be a {kind:?} profile",
            h.name
        )))
    }
}

fn resolve_run(run: &RunDoc, r: &mut Resolver<'_>) -> Result<TrainingRun> {
    let ctx = format!("run `{}`", run.name);
    let accelerator = r.hardware(&run.accelerator, &ctx)?;
    let server = r.hardware(&run.server, &ctx)?;
    expect_kind(&accelerator, HardwareKind::Accelerator, &ctx)?;
    expect_kind(&server, HardwareKind::Server, &ctx)?;
    let grid = r.grid(&run.grid, &ctx)?;
    let datacenter = run
        .datacenter
        .as_deref()
        .map(|d| r.datacenter(d, &ctx))
        .transpose()?;
    let partition = run
        .partition
        .as_deref()
        .map(|p| r.partition(p, &ctx))
        .transpose()?;

    if run.gpu_count == 0 || run.node_count == 0 {
        return Err(Error::Invariant(format!(
            "{ctx}: gpu_count > 0 and node_count > 0"
        )));
    }
    let accelerators_per_server = match server.accelerators_per_server {
        Some(per) => {
            if run.gpu_count as u64 != run.node_count as u64 * per as u64 {
                return Err(Error::Invariant(format!(
                    "{ctx}: gpu_count ({}) = node_count ({}) x accelerators_per_server ({per})",
                    run.gpu_count, run.node_count
                )));
            }
            per
        }
        None => {
            if !run.gpu_count.is_multiple_of(run.node_count) {
                return Err(Error::Invariant(format!(
                    "{ctx}: gpu_count ({}) must be a multiple of node_count ({}) when the server \
                     profile does not state accelerators_per_server",
                    run.gpu_count, run.node_count
                )));
            }
            run.gpu_count / run.node_count
        }
    };

    let capacity = run.wall_clock.hours() * run.gpu_count as f64 * GPU_HOURS_SLACK;
    if run.gpu_hours.hours() > capacity {
        return Err(Error::Invariant(format!(
            "{ctx}: gpu_hours ({}) <= wall_clock x gpu_count x {GPU_HOURS_SLACK} ({capacity} h)",
            run.gpu_hours
        )));
    }

    let utilization = run.utilization.unwrap_or(1.0);
    if !(utilization > 0.0 && utilization <= 1.0) {
        return Err(Error::Invariant(format!(
            "{ctx}: 0 < utilization <= 1 (got {utilization})"
        )));
    }

    let idle_method = run.idle_method.unwrap_or(if partition.is_some() {
        IdleMethod::Wallclock
    } else {
        IdleMethod::None
    });
    if idle_method != IdleMethod::None && partition.is_none() {
        return Err(Error::Invariant(format!(
            "{ctx}: idle_method `{idle_method}` requires a partition"
        )));
    }

    Ok(TrainingRun {
        name: run.name.clone(),
        gpu_hours: run.gpu_hours,
        wall_clock: run.wall_clock,
        gpu_count: run.gpu_count,
        node_count: run.node_count,
        accelerators_per_server,
        utilization,
        idle_method,
        accelerator,
        server,
        grid,
        datacenter,
        partition,
    })
}

/// Writes a project back to manifest form. Reloading the output yields an
/// equal [`Project`].
pub fn write_manifest(project: &Project) -> Result<String> {
    let p = &project.profiles;
    let doc = ManifestDoc {
        schema: SCHEMA_VERSION,
        name: project.name.clone(),
        default_grid: project.default_grid.as_ref().map(|g| g.region.clone()),
        inference: project.inference.clone(),
        workshop: project.workshop.as_ref().map(|w| WorkshopDoc {
            partition: w.partition.as_ref().map(|p| p.name.clone()),
            reference_run: w.reference_run.clone(),
            idle_source: w.idle_source,
            reported_grand_total: w.reported_grand_total,
            reported_embodied_plus_idle: w.reported_embodied_plus_idle,
            reported_gpu_hours: w.reported_gpu_hours,
            allocation: w
                .allocations
                .iter()
                .map(|a| AllocationDoc {
                    accelerator: a.accelerator.name.clone(),
                    server: a.server.name.clone(),
                    gpu_hours: a.gpu_hours,
                })
                .collect(),
        }),
        hardware: p.hardware.clone(),
        grid: p.grids.clone(),
        datacenter: p.datacenters.clone(),
        partition: p.partitions.clone(),
        run: project
            .runs
            .iter()
            .map(|r| RunDoc {
                name: r.name.clone(),
                gpu_hours: r.gpu_hours,
                wall_clock: r.wall_clock,
                gpu_count: r.gpu_count,
                node_count: r.node_count,
                accelerator: r.accelerator.name.clone(),
                server: r.server.name.clone(),
                grid: r.grid.region.clone(),
                datacenter: r.datacenter.as_ref().map(|d| d.name.clone()),
                partition: r.partition.as_ref().map(|p| p.name.clone()),
                utilization: Some(r.utilization),
                idle_method: Some(r.idle_method),
            })
            .collect(),
        process: project.processes.clone(),
        comparison: project
            .comparisons
            .iter()
            .map(|c| ComparisonDoc {
                model: c.model.clone(),
                parameters: c.parameters,
                pue: c.pue.map(|f| f.value),
                intensity: c.intensity.map(|f| f.value),
                energy: c.energy.map(|f| f.value),
                emissions: c.emissions.map(|f| f.value),
                emissions_with_pue: c.emissions_with_pue.map(|f| f.value),
                energy_includes_pue: c.energy_includes_pue,
            })
            .collect(),
        reported: project.reported.clone(),
    };
    toml::to_string(&doc).map_err(|e| Error::parse("<manifest writer>", e))
}

/// Keys accepted by [`apply_override`].
pub const OVERRIDE_KEYS: [&str; 5] = ["grid", "intensity", "pue", "idle_method", "utilization"];

/// Applies a `key=value` what-if override to every run, process and
/// deployment in the project. `base` supplies profiles the manifest did not
/// reference, e.g. for `grid=us-central1`.
pub fn apply_override(
    project: &mut Project,
    key: &str,
    value: &str,
    base: &Registries,
) -> Result<()> {
    let bad = |msg: String| Error::parse(format!("override {key}"), msg);
    match key {
        "grid" => {
            let grid = project
                .profiles
                .grid(value)
                .or_else(|_| base.grid(value))?
                .clone();
            upsert(&mut project.profiles.grids, grid.clone(), |g| &g.region);
            for run in &mut project.runs {
                run.grid = grid.clone();
            }
            for p in &mut project.processes {
                p.grid = Some(grid.region.clone());
            }
            if let Some(inf) = &mut project.inference {
                inf.grid = grid.region.clone();
            }
            project.default_grid = Some(grid);
        }
        "intensity" => {
            let intensity = CarbonIntensity::parse_lenient(value)?;
            for g in &mut project.profiles.grids {
                g.intensity = intensity;
            }
            for run in &mut project.runs {
                run.grid.intensity = intensity;
            }
            if let Some(g) = &mut project.default_grid {
                g.intensity = intensity;
            }
        }
        "pue" => {
            let pue: f64 = value
                .trim()
                .parse()
                .map_err(|_| bad(format!("expected a number, got `{value}`")))?;
            let dc = DatacenterProfile {
                name: "override".to_string(),
                pue,
            };
            dc.validate()?;
            for d in &mut project.profiles.datacenters {
                d.pue = pue;
            }
            for run in &mut project.runs {
                match &mut run.datacenter {
                    Some(d) => d.pue = pue,
                    None => run.datacenter = Some(dc.clone()),
                }
            }
            if project
                .runs
                .iter()
                .any(|r| r.datacenter.as_ref() == Some(&dc))
            {
                upsert(&mut project.profiles.datacenters, dc, |d| &d.name);
            }
            if let Some(inf) = &mut project.inference {
                inf.pue = Some(pue);
            }
        }
        "idle_method" => {
            let method: IdleMethod = value.parse()?;
            for run in &mut project.runs {
                if method != IdleMethod::None && run.partition.is_none() {
                    return Err(Error::Invariant(format!(
                        "run `{}`: idle_method `{method}` requires a partition",
                        run.name
                    )));
                }
                run.idle_method = method;
            }
        }
        "utilization" => {
            let u: f64 = value
                .trim()
                .parse()
                .map_err(|_| bad(format!("expected a number, got `{value}`")))?;
            if !(u > 0.0 && u <= 1.0) {
                return Err(Error::Invariant(format!("0 < utilization <= 1 (got {u})")));
            }
            for run in &mut project.runs {
                run.utilization = u;
            }
        }
        other => {
            return Err(bad(format!(
                "unknown key `{other}`; expected one of {}",
                OVERRIDE_KEYS.join(", ")
            )))
        }
    }
    Ok(())
}

/// Summary counts, handy for `validate` diagnostics.
pub fn describe(project: &Project) -> BTreeMap<&'static str, usize> {
    BTreeMap::from([
        ("runs", project.runs.len()),
        ("processes", project.processes.len()),
        ("comparisons", project.comparisons.len()),
        ("hardware", project.profiles.hardware.len()),
        ("grids", project.profiles.grids.len()),
    ])
}

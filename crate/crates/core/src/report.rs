//! Aggregated reports: life-cycle breakdowns, cross-model comparison with
//! inferred cells, project breakdowns and workshop-wide extrapolation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embodied::{embodied_for_hours, run_embodied, EmbodiedBreakdown};
use crate::error::{Error, Result};
use crate::operational::{
    apply_pue, check_pue, dynamic_energy, mode_shares, run_operational, IdleMethod, ModeShares,
    PartitionPowerModes,
};
use crate::profiles::{IdleSource, Project, TrainingRun};
use crate::telemetry::{BaselineMethod, DeploymentSummary};
use crate::units::{emissions_from_energy, CarbonIntensity, CarbonMass, Duration, Energy};

/// Default relative tolerance for comparison-row consistency checks.
pub const DEFAULT_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Embodied,
    Dynamic,
    Idle,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Embodied => "Embodied emissions",
            Source::Dynamic => "Dynamic consumption",
            Source::Idle => "Idle consumption",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LcaRow {
    pub source: Source,
    pub mass: CarbonMass,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcaReport {
    pub rows: Vec<LcaRow>,
    pub total: CarbonMass,
}

/// Combines the three life-cycle sources. Zero-mass sources are omitted.
pub fn lca_report(
    embodied: CarbonMass,
    dynamic: CarbonMass,
    idle: CarbonMass,
) -> Result<LcaReport> {
    let parts = [
        (Source::Embodied, embodied),
        (Source::Dynamic, dynamic),
        (Source::Idle, idle),
    ];
    let total: CarbonMass = parts.iter().map(|p| p.1).sum();
    if total.is_zero() {
        return Err(Error::EmptyInput(
            "all life-cycle sources are zero".to_string(),
        ));
    }
    let rows = parts
        .into_iter()
        .filter(|(_, m)| !m.is_zero())
        .map(|(source, mass)| LcaRow {
            source,
            mass,
            percent: 100.0 * mass.kg() / total.kg(),
        })
        .collect();
    Ok(LcaReport { rows, total })
}

/// Full life-cycle accounting of one training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunLca {
    pub run: String,
    pub embodied: EmbodiedBreakdown,
    pub dynamic_energy: Energy,
    pub idle_energy: Energy,
    pub report: LcaReport,
}

pub fn run_lca(run: &TrainingRun) -> Result<RunLca> {
    let embodied = run_embodied(run)?;
    let op = run_operational(run)?;
    let report = lca_report(embodied.total, op.dynamic_mass, op.idle_mass)?;
    Ok(RunLca {
        run: run.name.clone(),
        embodied,
        dynamic_energy: op.dynamic_energy,
        idle_energy: op.idle_energy,
        report,
    })
}

/// Embodied breakdown of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunEmbodied {
    pub run: String,
    #[serde(flatten)]
    pub breakdown: EmbodiedBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbodiedReport {
    pub runs: Vec<RunEmbodied>,
    pub total: CarbonMass,
}

fn require_runs(project: &Project) -> Result<()> {
    if project.runs.is_empty() {
        Err(Error::EmptyInput(format!(
            "project `{}` has no training runs",
            project.name
        )))
    } else {
        Ok(())
    }
}

pub fn embodied_report(project: &Project) -> Result<EmbodiedReport> {
    require_runs(project)?;
    let runs = project
        .runs
        .iter()
        .map(|r| {
            Ok(RunEmbodied {
                run: r.name.clone(),
                breakdown: run_embodied(r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = runs.iter().map(|r| r.breakdown.total).sum();
    Ok(EmbodiedReport { runs, total })
}

/// Dynamic consumption of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTraining {
    pub run: String,
    pub gpu_hours: Duration,
    pub utilization: f64,
    pub energy: Energy,
    pub grid: String,
    pub intensity: CarbonIntensity,
    pub mass: CarbonMass,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pue: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_with_pue: Option<CarbonMass>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingReport {
    pub runs: Vec<RunTraining>,
}

pub fn training_report(project: &Project) -> Result<TrainingReport> {
    require_runs(project)?;
    let runs = project
        .runs
        .iter()
        .map(|r| {
            let energy = dynamic_energy(r)?;
            let mass = emissions_from_energy(energy, r.grid.intensity)?;
            let pue = r.datacenter.as_ref().map(|d| d.pue);
            Ok(RunTraining {
                run: r.name.clone(),
                gpu_hours: r.gpu_hours,
                utilization: r.utilization,
                energy,
                grid: r.grid.region.clone(),
                intensity: r.grid.intensity,
                mass,
                pue,
                mass_with_pue: pue.map(|p| apply_pue(mass, p)).transpose()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TrainingReport { runs })
}

/// Idle and infrastructure consumption of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunIdle {
    pub run: String,
    pub method: IdleMethod,
    pub wall_clock: Duration,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shares: Option<ModeShares>,
    pub energy: Energy,
    pub mass: CarbonMass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdleReport {
    pub runs: Vec<RunIdle>,
}

pub fn idle_report(project: &Project) -> Result<IdleReport> {
    require_runs(project)?;
    let runs = project
        .runs
        .iter()
        .map(|r| {
            let op = run_operational(r)?;
            Ok(RunIdle {
                run: r.name.clone(),
                method: r.idle_method,
                wall_clock: r.wall_clock,
                partition: r.partition.as_ref().map(|p| p.name.clone()),
                shares: r
                    .partition
                    .as_ref()
                    .map(|p| mode_shares(&p.modes()))
                    .transpose()?,
                energy: op.idle_energy,
                mass: op.idle_mass,
            })
        })
        .collect::<Result<_>>()?;
    Ok(IdleReport { runs })
}

// ---------------------------------------------------------------------------
// Cross-model comparison

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Reported,
    Derived,
}

/// A table cell tagged with where its value came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldValue<T> {
    pub value: T,
    pub derived: bool,
}

impl<T> FieldValue<T> {
    pub fn reported(value: T) -> Self {
        Self {
            value,
            derived: false,
        }
    }

    pub fn derived(value: T) -> Self {
        Self {
            value,
            derived: true,
        }
    }

    pub fn provenance(&self) -> Provenance {
        if self.derived {
            Provenance::Derived
        } else {
            Provenance::Reported
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inconsistency {
    pub relation: String,
    pub stated: f64,
    pub computed: f64,
    pub relative_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub parameters: u64,
    pub pue: Option<FieldValue<f64>>,
    pub intensity: Option<FieldValue<CarbonIntensity>>,
    /// Training energy as listed; PUE-inclusive when `energy_includes_pue`.
    pub energy: Option<FieldValue<Energy>>,
    pub emissions: Option<FieldValue<CarbonMass>>,
    pub emissions_with_pue: Option<FieldValue<CarbonMass>>,
    pub energy_includes_pue: bool,
    #[serde(default)]
    pub flags: Vec<Inconsistency>,
}

impl ComparisonRow {
    pub fn is_consistent(&self) -> bool {
        self.flags.is_empty()
    }

    /// Listed energy with any PUE factor removed.
    pub fn energy_excluding_pue(&self) -> Option<f64> {
        let e = self.energy?.value.kwh();
        if self.energy_includes_pue {
            self.pue.map(|p| e / p.value)
        } else {
            Some(e)
        }
    }
}

fn rel_diff(stated: f64, computed: f64) -> f64 {
    if stated == computed {
        0.0
    } else {
        (computed - stated).abs() / stated.abs().max(f64::MIN_POSITIVE)
    }
}

/// Fills missing cells from the relations
/// `emissions = energy_excl_pue * intensity` and
/// `emissions_with_pue = emissions * pue`, tagging them derived, then checks
/// every fully-populated relation against `tolerance`.
pub fn complete_row(row: &ComparisonRow, tolerance: f64) -> Result<ComparisonRow> {
    let mut out = row.clone();
    if let Some(p) = out.pue {
        check_pue(p.value)?;
    }
    if out.energy_includes_pue && out.pue.is_none() {
        return Err(Error::CannotComplete {
            model: out.model.clone(),
            missing: vec!["pue (energy is PUE-inclusive)".to_string()],
        });
    }

    // emissions/pue relation first, so the energy relation can use its result
    for _ in 0..3 {
        let pue = out.pue.map(|p| p.value);
        let em = out.emissions.map(|m| m.value.kg());
        let ewp = out.emissions_with_pue.map(|m| m.value.kg());
        match (em, ewp, pue) {
            (None, Some(w), Some(p)) => {
                out.emissions = Some(FieldValue::derived(CarbonMass::from_kg(w / p)?));
            }
            (Some(m), None, Some(p)) => {
                out.emissions_with_pue = Some(FieldValue::derived(CarbonMass::from_kg(m * p)?));
            }
            (Some(m), Some(w), None) if m > 0.0 => {
                let p = w / m;
                check_pue(p)?;
                out.pue = Some(FieldValue::derived(p));
            }
            _ => {}
        }

        let intensity = out.intensity.map(|i| i.value.g_per_kwh());
        let em = out.emissions.map(|m| m.value.kg());
        let e_excl = out.energy_excluding_pue();
        match (e_excl, intensity, em) {
            (Some(e), Some(i), None) => {
                out.emissions = Some(FieldValue::derived(CarbonMass::from_grams(e * i)?));
            }
            (None, Some(i), Some(m)) if i > 0.0 => {
                let excl = m * 1e3 / i;
                let listed = if out.energy_includes_pue {
                    // pue presence checked above
                    excl * out.pue.map_or(1.0, |p| p.value)
                } else {
                    excl
                };
                out.energy = Some(FieldValue::derived(Energy::from_kwh(listed)?));
            }
            (Some(e), None, Some(m)) if e > 0.0 => {
                out.intensity = Some(FieldValue::derived(CarbonIntensity::from_g_per_kwh(
                    m * 1e3 / e,
                )?));
            }
            _ => {}
        }
    }

    let mut missing = Vec::new();
    if out.energy.is_none() {
        missing.push("energy".to_string());
    }
    if out.intensity.is_none() {
        missing.push("intensity".to_string());
    }
    if out.emissions.is_none() {
        missing.push("emissions".to_string());
    }
    if !missing.is_empty() {
        return Err(Error::CannotComplete {
            model: out.model.clone(),
            missing,
        });
    }

    let mut flags = Vec::new();
    if let (Some(e), Some(i), Some(m)) = (
        out.energy_excluding_pue(),
        out.intensity.map(|i| i.value.g_per_kwh()),
        out.emissions.map(|m| m.value.kg()),
    ) {
        let computed = e * i / 1e3;
        let d = rel_diff(m, computed);
        if d > tolerance {
            flags.push(Inconsistency {
                relation: "emissions = energy_excl_pue x intensity".to_string(),
                stated: m,
                computed,
                relative_difference: d,
            });
        }
    }
    if let (Some(m), Some(w), Some(p)) = (
        out.emissions.map(|m| m.value.kg()),
        out.emissions_with_pue.map(|w| w.value.kg()),
        out.pue.map(|p| p.value),
    ) {
        let computed = m * p;
        let d = rel_diff(w, computed);
        if d > tolerance {
            flags.push(Inconsistency {
                relation: "emissions_with_pue = emissions x pue".to_string(),
                stated: w,
                computed,
                relative_difference: d,
            });
        }
    }
    out.flags = flags;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub tolerance: f64,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(rows: &[ComparisonRow], tolerance: f64) -> Result<Comparison> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no comparison rows".to_string()));
    }
    Ok(Comparison {
        tolerance,
        rows: rows
            .iter()
            .map(|r| complete_row(r, tolerance))
            .collect::<Result<_>>()?,
    })
}

// ---------------------------------------------------------------------------
// Project breakdown

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub process: String,
    pub energy: Energy,
    pub mass: CarbonMass,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub project: String,
    pub rows: Vec<BreakdownRow>,
    pub total_energy: Energy,
    pub total_mass: CarbonMass,
    pub notes: Vec<String>,
}

/// Dynamic energy and emissions per run and measured process, largest first.
pub fn project_breakdown(project: &Project) -> Result<Breakdown> {
    let mut rows = Vec::new();
    for run in &project.runs {
        let op = run_operational(run)?;
        rows.push((run.name.clone(), op.dynamic_energy, op.dynamic_mass));
    }
    for p in &project.processes {
        let grid = project.process_grid(p)?;
        rows.push((
            p.name.clone(),
            p.energy,
            emissions_from_energy(p.energy, grid.intensity)?,
        ));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!(
            "project `{}` has no runs or processes",
            project.name
        )));
    }
    let total_energy: Energy = rows.iter().map(|r| r.1).sum();
    let total_mass: CarbonMass = rows.iter().map(|r| r.2).sum();
    if total_mass.is_zero() {
        return Err(Error::EmptyInput(
            "every process has zero emissions".to_string(),
        ));
    }
    let mut rows: Vec<BreakdownRow> = rows
        .into_iter()
        .map(|(process, energy, mass)| BreakdownRow {
            process,
            energy,
            mass,
            percent: 100.0 * mass.kg() / total_mass.kg(),
        })
        .collect();
    // stable: ties keep manifest order
    rows.sort_by(|a, b| b.mass.kg().total_cmp(&a.mass.kg()));

    let mut notes = Vec::new();
    for r in &project.reported {
        if let Some(e) = r.energy {
            notes.push(format!(
                "{}: {} kWh vs computed {} kWh ({:+.4}%)",
                r.label,
                e.kwh(),
                total_energy.kwh(),
                100.0 * (total_energy.kwh() - e.kwh()) / e.kwh()
            ));
        }
        if let Some(m) = r.mass {
            notes.push(format!(
                "{}: {} t vs computed {:.4} t ({:+.4}%)",
                r.label,
                m.tonnes(),
                total_mass.tonnes(),
                100.0 * (total_mass.kg() - m.kg()) / m.kg()
            ));
        }
    }
    Ok(Breakdown {
        project: project.name.clone(),
        rows,
        total_energy,
        total_mass,
        notes,
    })
}

// ---------------------------------------------------------------------------
// Workshop-wide extrapolation

/// How idle emissions are scaled from aggregate dynamic emissions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IdleRatioSource {
    /// `(infrastructure + idle) / dynamic` of a partition.
    PowerModes(PartitionPowerModes),
    /// Idle-to-dynamic mass ratio of a fully accounted run.
    Run {
        idle: CarbonMass,
        dynamic: CarbonMass,
    },
    Fixed(f64),
}

impl IdleRatioSource {
    pub fn ratio(&self) -> Result<f64> {
        match *self {
            IdleRatioSource::PowerModes(m) => {
                let d = m.dynamic.watts();
                if d <= 0.0 {
                    return Err(Error::Domain("partition dynamic power is zero".into()));
                }
                Ok(m.overhead().watts() / d)
            }
            IdleRatioSource::Run { idle, dynamic } => {
                if dynamic.is_zero() {
                    return Err(Error::Domain("reference run has zero dynamic mass".into()));
                }
                Ok(idle.kg() / dynamic.kg())
            }
            IdleRatioSource::Fixed(r) if r.is_finite() && r >= 0.0 => Ok(r),
            IdleRatioSource::Fixed(r) => Err(Error::Domain(format!("idle ratio {r}"))),
        }
    }
}

/// An alternative idle figure implied by published totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdleReading {
    pub label: String,
    pub idle: CarbonMass,
    pub grand_total: CarbonMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub gpu_hours: Duration,
    pub dynamic: CarbonMass,
    pub embodied: CarbonMass,
    pub idle_ratio: f64,
    pub idle: CarbonMass,
    pub grand_total: CarbonMass,
    pub readings: Vec<IdleReading>,
    pub warnings: Vec<String>,
}

/// Readings further apart than this (relative) raise a warning.
pub const READING_AGREEMENT: f64 = 0.05;

/// Extends a project's dynamic emissions with embodied emissions of all
/// allocated device-hours and proportionally scaled idle emissions.
pub fn workshop_extrapolation(
    project: &Project,
    idle_source: IdleRatioSource,
) -> Result<Extrapolation> {
    let workshop = project.workshop.as_ref().ok_or_else(|| {
        Error::CannotExtrapolate(format!(
            "project `{}` has no [workshop] section",
            project.name
        ))
    })?;
    if workshop.allocations.is_empty() {
        return Err(Error::CannotExtrapolate(
            "no GPU-hour allocations per hardware type".to_string(),
        ));
    }
    let breakdown = project_breakdown(project)?;
    let dynamic = breakdown.total_mass;

    let mut embodied = CarbonMass::ZERO;
    let mut gpu_hours = Duration::ZERO;
    for a in &workshop.allocations {
        let per_server = a.server.accelerators_per_server.ok_or_else(|| {
            Error::CannotExtrapolate(format!(
                "server `{}` does not state accelerators_per_server",
                a.server.name
            ))
        })?;
        let e = embodied_for_hours(&a.accelerator, &a.server, per_server, a.gpu_hours)?;
        embodied = embodied + e.total;
        gpu_hours = gpu_hours + a.gpu_hours;
    }

    let idle_ratio = idle_source.ratio()?;
    let idle = dynamic.scale(idle_ratio)?;
    let grand_total = dynamic + embodied + idle;

    let mut readings = Vec::new();
    if let Some(total) = workshop.reported_grand_total {
        let idle = total.kg() - dynamic.kg() - embodied.kg();
        if idle >= 0.0 {
            readings.push(IdleReading {
                label: format!("from reported grand total {} t", total.tonnes()),
                idle: CarbonMass::from_kg(idle)?,
                grand_total: total,
            });
        }
    }
    if let Some(extra) = workshop.reported_embodied_plus_idle {
        let idle = extra.kg() - embodied.kg();
        if idle >= 0.0 {
            readings.push(IdleReading {
                label: format!("from reported embodied + idle {} t", extra.tonnes()),
                idle: CarbonMass::from_kg(idle)?,
                grand_total: dynamic + extra,
            });
        }
    }
    let mut warnings = Vec::new();
    if let Some(stated) = workshop.reported_gpu_hours {
        if rel_diff(stated.hours(), gpu_hours.hours()) > 1e-9 {
            warnings.push(format!(
                "allocations sum to {} GPU-hours but {} are stated; embodied uses the allocations",
                gpu_hours.hours(),
                stated.hours()
            ));
        }
    }
    for (i, a) in readings.iter().enumerate() {
        for b in &readings[i + 1..] {
            let d = rel_diff(a.idle.kg(), b.idle.kg());
            if d > READING_AGREEMENT {
                warnings.push(format!(
                    "published figures disagree on idle emissions: {:.2} t ({}) vs {:.2} t ({})",
                    a.idle.tonnes(),
                    a.label,
                    b.idle.tonnes(),
                    b.label
                ));
            }
        }
    }
    Ok(Extrapolation {
        gpu_hours,
        dynamic,
        embodied,
        idle_ratio,
        idle,
        grand_total,
        readings,
        warnings,
    })
}

/// Resolves the workshop's configured idle source.
pub fn workshop_idle_source(project: &Project) -> Result<IdleRatioSource> {
    let w = project
        .workshop
        .as_ref()
        .ok_or_else(|| Error::CannotExtrapolate("no [workshop] section".to_string()))?;
    match w.idle_source {
        IdleSource::Fractional => w
            .partition
            .as_ref()
            .map(|p| IdleRatioSource::PowerModes(p.modes()))
            .ok_or_else(|| {
                Error::CannotExtrapolate("fractional idle source needs a partition".to_string())
            }),
        IdleSource::ReferenceRun => {
            let name = w.reference_run.as_deref().ok_or_else(|| {
                Error::CannotExtrapolate("reference-run idle source needs reference_run".into())
            })?;
            let op = run_operational(project.run(name)?)?;
            Ok(IdleRatioSource::Run {
                idle: op.idle_mass,
                dynamic: op.dynamic_mass,
            })
        }
    }
}

/// Project breakdown with the optional workshop-wide extension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectReport {
    pub breakdown: Breakdown,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workshop: Option<Extrapolation>,
}

pub fn project_report(project: &Project) -> Result<ProjectReport> {
    let breakdown = project_breakdown(project)?;
    let workshop = match &project.workshop {
        Some(_) => Some(workshop_extrapolation(
            project,
            workshop_idle_source(project)?,
        )?),
        None => None,
    };
    Ok(ProjectReport {
        breakdown,
        workshop,
    })
}

// ---------------------------------------------------------------------------
// Rendering

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    Json,
    Csv,
    #[default]
    Markdown,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "markdown" | "md" => Ok(Format::Markdown),
            other => Err(Error::parse(
                "format",
                format!("expected json|csv|markdown, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub text: String,
    pub derived: bool,
}

impl Cell {
    fn plain(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            derived: false,
        }
    }

    fn num(value: f64, decimals: usize) -> Self {
        Self::plain(format!("{value:.decimals$}"))
    }

    fn field<T: Copy>(f: Option<FieldValue<T>>, fmt: impl Fn(T) -> String) -> Self {
        match f {
            Some(v) => Self {
                text: fmt(v.value),
                derived: v.derived,
            },
            None => Self::plain(""),
        }
    }
}

/// Column-oriented view used for CSV and markdown output.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Rendered as a bold trailing row in markdown; omitted from CSV.
    pub total: Option<Vec<Cell>>,
    pub notes: Vec<String>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            total: None,
            notes: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(|c| c.text.as_str()))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("| {} |\n", self.columns.join(" | ")));
        s.push_str(&format!(
            "|{}\n",
            self.columns.iter().map(|_| "---|").collect::<String>()
        ));
        let cell = |c: &Cell, bold: bool| {
            if c.text.is_empty() {
                String::new()
            } else if bold {
                format!("**{}**", c.text)
            } else if c.derived {
                format!("*{}*", c.text)
            } else {
                c.text.clone()
            }
        };
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|c| cell(c, false)).collect();
            s.push_str(&format!("| {} |\n", cells.join(" | ")));
        }
        if let Some(t) = &self.total {
            let cells: Vec<String> = t.iter().map(|c| cell(c, true)).collect();
            s.push_str(&format!("| {} |\n", cells.join(" | ")));
        }
        if !self.notes.is_empty() {
            s.push('\n');
            for n in &self.notes {
                s.push_str(&format!("- {n}\n"));
            }
        }
        s
    }
}

/// Reports that render to json, csv and markdown.
pub trait Render: Serialize {
    fn table(&self) -> Table;

    fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Json => json(self),
            Format::Csv => Ok(self.table().to_csv()),
            Format::Markdown => Ok(self.table().to_markdown()),
        }
    }
}

fn json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::parse("json", e))?;
    s.push('\n');
    Ok(s)
}

pub fn render<R: Render>(report: &R, format: Format) -> Result<String> {
    report.render(format)
}

impl Render for LcaReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&[
            "Process",
            "CO2 emissions (tonnes CO2eq)",
            "Percentage of total",
        ]);
        for r in &self.rows {
            t.rows.push(vec![
                Cell::plain(r.source.to_string()),
                Cell::num(r.mass.tonnes(), 2),
                Cell::num(r.percent, 1),
            ]);
        }
        t.total = Some(vec![
            Cell::plain("Total"),
            Cell::num(self.total.tonnes(), 2),
            Cell::num(100.0, 1),
        ]);
        t
    }
}

impl Render for RunLca {
    fn table(&self) -> Table {
        let mut t = self.report.table();
        t.notes.push(format!(
            "{}: dynamic {:.0} kWh, idle {:.0} kWh; embodied server {:.2} t + accelerator {:.2} t",
            self.run,
            self.dynamic_energy.kwh(),
            self.idle_energy.kwh(),
            self.embodied.server_mass.tonnes(),
            self.embodied.accelerator_mass.tonnes()
        ));
        t
    }
}

impl Render for Comparison {
    fn table(&self) -> Table {
        let mut t = Table::new(&[
            "Model name",
            "Number of parameters",
            "Datacenter PUE",
            "Carbon intensity of grid used (gCO2eq/kWh)",
            "Power consumption (MWh)",
            "CO2eq emissions (tonnes)",
            "CO2eq emissions x PUE (tonnes)",
            "Consistent",
        ]);
        for r in &self.rows {
            t.rows.push(vec![
                Cell::plain(r.model.clone()),
                Cell::plain(format_params(r.parameters)),
                Cell::field(r.pue, |p| format!("{p:.2}")),
                Cell::field(r.intensity, |i| format!("{:.0}", i.g_per_kwh())),
                Cell::field(r.energy, |e| format!("{:.0}", e.mwh())),
                Cell::field(r.emissions, |m| format!("{:.1}", m.tonnes())),
                Cell::field(r.emissions_with_pue, |m| format!("{:.1}", m.tonnes())),
                Cell::plain(if r.is_consistent() { "yes" } else { "no" }),
            ]);
            for f in &r.flags {
                t.notes.push(format!(
                    "{}: {} disagrees by {:.1}% (stated {:.1}, computed {:.1}; tolerance {:.0}%)",
                    r.model,
                    f.relation,
                    100.0 * f.relative_difference,
                    f.stated / 1e3,
                    f.computed / 1e3,
                    100.0 * self.tolerance
                ));
            }
        }
        t
    }
}

fn format_params(n: u64) -> String {
    if n >= 1_000_000_000 && n.is_multiple_of(1_000_000_000) {
        format!("{}B", n / 1_000_000_000)
    } else if n >= 1_000_000_000 {
        format!("{:.1}B", n as f64 / 1e9)
    } else {
        n.to_string()
    }
}

impl Render for Breakdown {
    fn table(&self) -> Table {
        let mut t = Table::new(&[
            "Process",
            "Energy consumed (kWh)",
            "CO2 emissions (tonnes of CO2eq)",
            "Percentage of total emissions",
        ]);
        for r in &self.rows {
            t.rows.push(vec![
                Cell::plain(r.process.clone()),
                Cell::num(r.energy.kwh(), 0),
                Cell::num(r.mass.tonnes(), 2),
                Cell::num(r.percent, 2),
            ]);
        }
        t.total = Some(vec![
            Cell::plain("Total"),
            Cell::num(self.total_energy.kwh(), 0),
            Cell::num(self.total_mass.tonnes(), 2),
            Cell::num(100.0, 2),
        ]);
        t.notes = self.notes.clone();
        t
    }
}

impl Render for Extrapolation {
    fn table(&self) -> Table {
        let mut t = Table::new(&["Estimate", "Idle (tonnes CO2eq)", "Total (tonnes CO2eq)"]);
        t.rows.push(vec![
            Cell::plain(format!("computed (idle ratio {:.4})", self.idle_ratio)),
            Cell::num(self.idle.tonnes(), 2),
            Cell::num(self.grand_total.tonnes(), 2),
        ]);
        for r in &self.readings {
            t.rows.push(vec![
                Cell {
                    text: r.label.clone(),
                    derived: true,
                },
                Cell::num(r.idle.tonnes(), 2),
                Cell::num(r.grand_total.tonnes(), 2),
            ]);
        }
        t.notes.push(format!(
            "{:.2} M GPU-hours: dynamic {:.2} t, embodied {:.2} t",
            self.gpu_hours.hours() / 1e6,
            self.dynamic.tonnes(),
            self.embodied.tonnes()
        ));
        t.notes
            .extend(self.warnings.iter().map(|w| format!("warning: {w}")));
        t
    }
}

impl Render for EmbodiedReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&[
            "Run",
            "Server-hours",
            "Server (tonnes CO2eq)",
            "GPU-hours",
            "GPUs (tonnes CO2eq)",
            "Total (tonnes CO2eq)",
        ]);
        for r in &self.runs {
            let b = &r.breakdown;
            t.rows.push(vec![
                Cell::plain(r.run.clone()),
                Cell::num(b.server_hours.hours(), 2),
                Cell::num(b.server_mass.tonnes(), 2),
                Cell::num(b.accelerator_hours.hours(), 0),
                Cell::num(b.accelerator_mass.tonnes(), 2),
                Cell::num(b.total.tonnes(), 2),
            ]);
            t.notes.push(format!(
                "{}: {:.4} kg/h per server, {:.4} kg/h per GPU",
                r.run,
                b.server_rate.kg_per_hour(),
                b.accelerator_rate.kg_per_hour()
            ));
        }
        if self.runs.len() > 1 {
            let mut total = vec![Cell::plain("Total")];
            total.extend((0..4).map(|_| Cell::plain("")));
            total.push(Cell::num(self.total.tonnes(), 2));
            t.total = Some(total);
        }
        t
    }
}

impl Render for TrainingReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&[
            "Run",
            "GPU-hours",
            "Utilization",
            "Total energy used (kWh)",
            "Grid",
            "Carbon intensity (gCO2eq/kWh)",
            "CO2eq emissions (tonnes)",
            "Datacenter PUE",
            "CO2eq emissions x PUE (tonnes)",
        ]);
        for r in &self.runs {
            t.rows.push(vec![
                Cell::plain(r.run.clone()),
                Cell::num(r.gpu_hours.hours(), 0),
                Cell::num(r.utilization, 2),
                Cell::num(r.energy.kwh(), 0),
                Cell::plain(r.grid.clone()),
                Cell::num(r.intensity.g_per_kwh(), 0),
                Cell::num(r.mass.tonnes(), 2),
                r.pue.map_or(Cell::plain(""), |p| Cell::num(p, 2)),
                r.mass_with_pue
                    .map_or(Cell::plain(""), |m| Cell::num(m.tonnes(), 2)),
            ]);
        }
        t
    }
}

impl Render for IdleReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&[
            "Run",
            "Method",
            "Wall-clock (hours)",
            "Idle energy (kWh)",
            "Idle CO2eq (tonnes)",
        ]);
        for r in &self.runs {
            t.rows.push(vec![
                Cell::plain(r.run.clone()),
                Cell::plain(r.method.to_string()),
                Cell::num(r.wall_clock.hours(), 2),
                Cell::num(r.energy.kwh(), 0),
                Cell::num(r.mass.tonnes(), 2),
            ]);
            if let (Some(p), Some(s)) = (&r.partition, &r.shares) {
                t.notes.push(format!(
                    "{}: partition {p} shares infrastructure {:.1}%, idle {:.1}%, dynamic {:.1}%",
                    r.run,
                    100.0 * s.infrastructure,
                    100.0 * s.idle,
                    100.0 * s.dynamic
                ));
            }
        }
        t
    }
}

impl Render for ProjectReport {
    fn table(&self) -> Table {
        self.breakdown.table()
    }

    fn render(&self, format: Format) -> Result<String> {
        let mut out = match format {
            Format::Json => return json(self),
            Format::Csv => self.breakdown.table().to_csv(),
            Format::Markdown => self.breakdown.table().to_markdown(),
        };
        if let Some(w) = &self.workshop {
            out.push('\n');
            out.push_str(&match format {
                Format::Csv => w.table().to_csv(),
                _ => w.table().to_markdown(),
            });
        }
        Ok(out)
    }
}

impl Render for DeploymentSummary {
    fn table(&self) -> Table {
        let mut t = Table::new(&["Metric", "Value"]);
        let mut row = |k: String, v: String| t.rows.push(vec![Cell::plain(k), Cell::plain(v)]);
        row(
            "Duration (days)".into(),
            format!("{:.2}", self.duration.days()),
        );
        row(
            "Energy consumed (kWh)".into(),
            format!("{:.2}", self.total_energy.kwh()),
        );
        for c in &self.per_component {
            row(
                format!("{} energy (kWh)", c.component.to_string().to_uppercase()),
                format!("{:.2} ({:.1}%)", c.energy.kwh(), 100.0 * c.fraction),
            );
        }
        for (c, p) in &self.component_power {
            row(
                format!(
                    "{} power mean / min / max (W)",
                    c.to_string().to_uppercase()
                ),
                format!(
                    "{:.0} / {:.0} / {:.0}",
                    p.mean.watts(),
                    p.min.watts(),
                    p.max.watts()
                ),
            );
        }
        row(
            "Instance power mean / min / max (W)".into(),
            format!(
                "{:.0} / {:.0} / {:.0}",
                self.mean_power.watts(),
                self.min_power.watts(),
                self.max_power.watts()
            ),
        );
        row("Requests".into(), self.total_requests.to_string());
        row(
            "Requests per hour".into(),
            format!("{:.1}", self.requests_per_hour),
        );
        if let Some(b) = &self.baseline {
            let method = match b.method {
                BaselineMethod::ZeroRequestMean { buckets } => {
                    format!("mean of {buckets} zero-request buckets")
                }
                BaselineMethod::Regression { .. } => "regression intercept".to_string(),
            };
            row(
                format!(
                    "Zero-request energy per {:.0} min (kWh)",
                    self.bucket_minutes
                ),
                format!("{:.3} ({method})", b.energy.kwh()),
            );
        }
        row(
            "Carbon intensity (gCO2eq/kWh)".into(),
            format!("{} ({})", self.grid.intensity.g_per_kwh(), self.grid.region),
        );
        row("PUE".into(), format!("{:.2}", self.pue));
        row(
            "CO2eq emissions (kg)".into(),
            format!("{:.1}", self.total_mass.kg()),
        );
        row(
            "CO2eq emissions per day (kg)".into(),
            format!("{:.2}", self.daily_mass.kg()),
        );
        t
    }
}

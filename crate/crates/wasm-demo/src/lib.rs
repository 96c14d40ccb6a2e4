//! Browser bindings for the demo page in `www/`.
//!
//! Each export is a thin wrapper over a plain function so the logic can be
//! tested natively. Results cross the boundary as JSON strings.

use mlca_core::embodied::hourly_embodied_rate;
use mlca_core::profiles::{
    apply_override, builtin_profiles, load_manifest_with, HardwareKind, HardwareProfile,
};
use mlca_core::report::{complete_row, run_lca, ComparisonRow, FieldValue, Format, Render};
use mlca_core::{CarbonIntensity, CarbonMass, Duration, Energy};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const EXAMPLE_MANIFEST: &str = include_str!("../../core/fixtures/bloom.manifest");

#[derive(Debug, Serialize)]
struct LcaRowOut {
    source: String,
    tonnes: f64,
    percent: f64,
}

#[derive(Debug, Serialize)]
struct RunOut {
    run: String,
    rows: Vec<LcaRowOut>,
    total_tonnes: f64,
    markdown: String,
}

#[derive(Debug, Serialize)]
struct LcaOut {
    project: String,
    runs: Vec<RunOut>,
}

/// Life-cycle breakdown of every run in `manifest`, after applying
/// `key=value` overrides given one per line.
pub fn lca_json(manifest: &str, overrides: &str) -> Result<String, String> {
    let base = builtin_profiles();
    let mut project =
        load_manifest_with(manifest.as_bytes(), "manifest", &base).map_err(|e| e.to_string())?;
    for line in overrides.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{line}`"))?;
        apply_override(&mut project, k.trim(), v.trim(), &base).map_err(|e| e.to_string())?;
    }
    if project.runs.is_empty() {
        return Err("the manifest declares no [[run]]".to_string());
    }
    let mut runs = Vec::new();
    for run in &project.runs {
        let lca = run_lca(run).map_err(|e| e.to_string())?;
        runs.push(RunOut {
            run: lca.run.clone(),
            rows: lca
                .report
                .rows
                .iter()
                .map(|r| LcaRowOut {
                    source: r.source.to_string(),
                    tonnes: r.mass.tonnes(),
                    percent: r.percent,
                })
                .collect(),
            total_tonnes: lca.report.total.tonnes(),
            markdown: lca.render(Format::Markdown).map_err(|e| e.to_string())?,
        });
    }
    serde_json::to_string(&LcaOut {
        project: project.name,
        runs,
    })
    .map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct CellOut {
    value: f64,
    derived: bool,
}

#[derive(Debug, Serialize)]
struct FlagOut {
    relation: String,
    stated: f64,
    computed: f64,
    percent_off: f64,
}

#[derive(Debug, Serialize)]
struct RowOut {
    pue: Option<CellOut>,
    intensity: Option<CellOut>,
    energy_mwh: Option<CellOut>,
    emissions_t: Option<CellOut>,
    emissions_pue_t: Option<CellOut>,
    flags: Vec<FlagOut>,
}

fn cell<T: Copy>(f: Option<FieldValue<T>>, unit: impl Fn(T) -> f64) -> Option<CellOut> {
    f.map(|f| CellOut {
        value: unit(f.value),
        derived: f.derived,
    })
}

fn given<T>(
    v: Option<f64>,
    make: impl Fn(f64) -> Result<T, mlca_core::units::QuantityError>,
) -> Result<Option<FieldValue<T>>, String> {
    v.filter(|x| !x.is_nan())
        .map(|x| make(x).map(FieldValue::reported).map_err(|e| e.to_string()))
        .transpose()
}

/// Fills the missing cells of one comparison row and checks the rest.
pub fn complete_json(
    pue: Option<f64>,
    intensity: Option<f64>,
    energy_mwh: Option<f64>,
    emissions_t: Option<f64>,
    emissions_pue_t: Option<f64>,
    energy_includes_pue: bool,
    tolerance: f64,
) -> Result<String, String> {
    let row = ComparisonRow {
        model: "model".to_string(),
        parameters: 0,
        pue: given(pue, Ok)?,
        intensity: given(intensity, CarbonIntensity::from_g_per_kwh)?,
        energy: given(energy_mwh, Energy::from_mwh)?,
        emissions: given(emissions_t, CarbonMass::from_tonnes)?,
        emissions_with_pue: given(emissions_pue_t, CarbonMass::from_tonnes)?,
        energy_includes_pue,
        flags: Vec::new(),
    };
    let done = complete_row(&row, tolerance).map_err(|e| e.to_string())?;
    let out = RowOut {
        pue: cell(done.pue, |p| p),
        intensity: cell(done.intensity, |i| i.g_per_kwh()),
        energy_mwh: cell(done.energy, |e| e.kwh() / 1000.0),
        emissions_t: cell(done.emissions, |m| m.tonnes()),
        emissions_pue_t: cell(done.emissions_with_pue, |m| m.tonnes()),
        flags: done
            .flags
            .into_iter()
            .map(|f| FlagOut {
                relation: f.relation,
                stated: f.stated,
                computed: f.computed,
                percent_off: 100.0 * f.relative_difference,
            })
            .collect(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct AmortisedOut {
    kg_per_hour: f64,
    charged_kg: f64,
}

/// Hourly manufacturing charge of one device and the share billed to `hours` of use.
pub fn amortise_json(
    embodied_kg: f64,
    lifetime_years: f64,
    usage_fraction: f64,
    hours: f64,
) -> Result<String, String> {
    let profile = HardwareProfile {
        name: "device".to_string(),
        kind: HardwareKind::Accelerator,
        tdp: None,
        embodied: CarbonMass::from_kg(embodied_kg).map_err(|e| e.to_string())?,
        lifetime_years,
        avg_usage_fraction: usage_fraction,
        accelerators_per_server: None,
    };
    let rate = hourly_embodied_rate(&profile).map_err(|e| e.to_string())?;
    let hours = Duration::from_hours(hours).map_err(|e| e.to_string())?;
    let charged = rate.charge(hours).map_err(|e| e.to_string())?;
    serde_json::to_string(&AmortisedOut {
        kg_per_hour: rate.kg_per_hour(),
        charged_kg: charged.kg(),
    })
    .map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = exampleManifest)]
pub fn example_manifest() -> String {
    EXAMPLE_MANIFEST.to_string()
}

#[wasm_bindgen]
pub fn lca(manifest: &str, overrides: &str) -> Result<String, JsError> {
    lca_json(manifest, overrides).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = completeRow)]
pub fn complete(
    pue: Option<f64>,
    intensity: Option<f64>,
    energy_mwh: Option<f64>,
    emissions_t: Option<f64>,
    emissions_pue_t: Option<f64>,
    energy_includes_pue: bool,
    tolerance: f64,
) -> Result<String, JsError> {
    complete_json(
        pue,
        intensity,
        energy_mwh,
        emissions_t,
        emissions_pue_t,
        energy_includes_pue,
        tolerance,
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn amortise(
    embodied_kg: f64,
    lifetime_years: f64,
    usage_fraction: f64,
    hours: f64,
) -> Result<String, JsError> {
    amortise_json(embodied_kg, lifetime_years, usage_fraction, hours).map_err(|e| JsError::new(&e))
}

//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};

use mlca_core::embodied::{embodied_for_hours, hourly_embodied_rate, run_embodied};
use mlca_core::operational::{
    apply_pue, dynamic_energy, idle_energy_wallclock, mode_shares, run_operational,
    PartitionPowerModes,
};
use mlca_core::profiles::{load_manifest, write_manifest};
use mlca_core::report::{
    compare, lca_report, project_breakdown, run_lca, workshop_extrapolation, workshop_idle_source,
    DEFAULT_TOLERANCE,
};
use mlca_core::synth::linear_bucket_pairs;
use mlca_core::telemetry::{
    baseline_energy, bucket_join, component_split, deployment_summary, ingest_power_csv,
    ingest_requests_csv, power_stats, BaselineMethod, Component, ComponentFilter,
};
use mlca_core::units::{emissions_from_energy, parse_duration};
use mlca_core::{CarbonIntensity, CarbonMass, Duration, Energy, Power};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Outcome = Result<Vec<String>, String>;

fn rel(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs()
}

/// Records one comparison; fails the criterion if out of tolerance.
fn expect(log: &mut Vec<String>, what: &str, ok: bool, detail: String) -> Result<(), String> {
    let line = format!("{what}: {detail}");
    if ok {
        log.push(line);
        Ok(())
    } else {
        Err(line)
    }
}

fn within_rel(
    log: &mut Vec<String>,
    what: &str,
    actual: f64,
    expected: f64,
    tol: f64,
) -> Result<(), String> {
    expect(
        log,
        what,
        rel(actual, expected) <= tol,
        format!("{actual:.6} vs {expected} (±{:.2}%)", tol * 100.0),
    )
}

fn within_abs(
    log: &mut Vec<String>,
    what: &str,
    actual: f64,
    expected: f64,
    tol: f64,
) -> Result<(), String> {
    expect(
        log,
        what,
        (actual - expected).abs() <= tol,
        format!("{actual:.6} vs {expected} (±{tol})"),
    )
}

fn kwh(v: f64) -> Energy {
    Energy::from_kwh(v).unwrap()
}

fn tonnes(v: f64) -> CarbonMass {
    CarbonMass::from_tonnes(v).unwrap()
}

fn property_runner() -> TestRunner {
    TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    })
}

fn c1_dynamic_energy() -> Outcome {
    let mut log = vec![];
    let p = common::project("bloom.manifest");
    let e = dynamic_energy(&p.runs[0]).map_err(|e| e.to_string())?;
    within_abs(
        &mut log,
        "BLOOM dynamic energy kWh",
        e.kwh(),
        433_196.0,
        1.0,
    )?;
    // independent oracle: device-hours times rated power
    within_abs(
        &mut log,
        "oracle 1,082,990 h x 0.4 kW",
        e.kwh(),
        1_082_990.0 * 0.4,
        1e-6,
    )?;
    Ok(log)
}

fn c2_dynamic_emissions() -> Outcome {
    let mut log = vec![];
    let m = emissions_from_energy(
        kwh(433_196.0),
        CarbonIntensity::from_g_per_kwh(57.0).unwrap(),
    )
    .unwrap();
    within_rel(
        &mut log,
        "433,196 kWh x 57 g/kWh (t)",
        m.tonnes(),
        24.69,
        0.005,
    )?;
    let p = common::project("bloom.manifest");
    let op = run_operational(&p.runs[0]).map_err(|e| e.to_string())?;
    within_rel(
        &mut log,
        "BLOOM fixture dynamic mass (t)",
        op.dynamic_mass.tonnes(),
        24.69,
        0.005,
    )?;
    Ok(log)
}

fn c3_embodied_rates() -> Outcome {
    let mut log = vec![];
    let p = common::project("bloom.manifest");
    let server = hourly_embodied_rate(&p.runs[0].server).map_err(|e| e.to_string())?;
    let gpu = hourly_embodied_rate(&p.runs[0].accelerator).map_err(|e| e.to_string())?;
    within_rel(
        &mut log,
        "server rate kg/h",
        server.kg_per_hour(),
        0.056,
        0.02,
    )?;
    within_rel(
        &mut log,
        "accelerator rate kg/h",
        gpu.kg_per_hour(),
        0.0034,
        0.02,
    )?;
    within_rel(
        &mut log,
        "oracle 2500/(6*8760*0.85)",
        server.kg_per_hour(),
        2500.0 / (6.0 * 8760.0 * 0.85),
        1e-12,
    )?;
    Ok(log)
}

fn c4_embodied_totals() -> Outcome {
    let mut log = vec![];
    let p = common::project("bloom.manifest");
    let b = run_embodied(&p.runs[0]).map_err(|e| e.to_string())?;
    within_rel(&mut log, "server (t)", b.server_mass.tonnes(), 7.57, 0.02)?;
    within_rel(
        &mut log,
        "accelerator (t)",
        b.accelerator_mass.tonnes(),
        3.64,
        0.02,
    )?;
    within_rel(&mut log, "total (t)", b.total.tonnes(), 11.2, 0.02)?;
    expect(
        &mut log,
        "total = server + accelerator",
        b.total == b.server_mass + b.accelerator_mass,
        "exact".into(),
    )?;
    Ok(log)
}

fn c5_idle_wallclock() -> Outcome {
    let mut log = vec![];
    let wall = parse_duration("118d5h41m").map_err(|e| e.to_string())?;
    let back_solved = PartitionPowerModes::new(
        Power::from_kw(90.44).unwrap(),
        Power::ZERO,
        Power::from_kw(1.0).unwrap(),
    );
    let e = idle_energy_wallclock(wall, &back_solved);
    within_rel(
        &mut log,
        "2837.68 h x 90.44 kW (kWh)",
        e.kwh(),
        256_646.0,
        0.001,
    )?;
    let m = emissions_from_energy(e, CarbonIntensity::from_g_per_kwh(57.0).unwrap()).unwrap();
    within_rel(&mut log, "idle mass (t)", m.tonnes(), 14.6, 0.01)?;
    let p = common::project("bloom.manifest");
    let op = run_operational(&p.runs[0]).map_err(|e| e.to_string())?;
    within_rel(
        &mut log,
        "fixture with 27+64 kW (kWh)",
        op.idle_energy.kwh(),
        256_646.0,
        0.007,
    )?;
    Ok(log)
}

fn c6_mode_shares() -> Outcome {
    let mut log = vec![];
    let p = common::project("bloom.manifest");
    let part = p.runs[0]
        .partition
        .as_ref()
        .ok_or("fixture has no partition")?;
    let s = mode_shares(&part.modes()).map_err(|e| e.to_string())?;
    within_abs(
        &mut log,
        "infrastructure %",
        s.infrastructure * 100.0,
        13.5,
        0.1,
    )?;
    within_abs(&mut log, "idle %", s.idle * 100.0, 32.0, 0.1)?;
    within_abs(&mut log, "dynamic %", s.dynamic * 100.0, 54.5, 0.1)?;
    Ok(log)
}

fn c7_lca_report() -> Outcome {
    let mut log = vec![];
    let r = lca_report(tonnes(11.2), tonnes(24.69), tonnes(14.6)).map_err(|e| e.to_string())?;
    within_rel(&mut log, "total (t)", r.total.tonnes(), 50.5, 0.005)?;
    for (row, want) in r.rows.iter().zip([22.2, 48.9, 28.9]) {
        within_abs(
            &mut log,
            &format!("{} %", row.source),
            row.percent,
            want,
            0.5,
        )?;
    }
    let full = run_lca(&common::project("bloom.manifest").runs[0]).map_err(|e| e.to_string())?;
    within_rel(
        &mut log,
        "fixture end-to-end total (t)",
        full.report.total.tonnes(),
        50.49,
        0.005,
    )?;
    for (row, want) in full.report.rows.iter().zip([22.2, 48.9, 28.9]) {
        within_abs(
            &mut log,
            &format!("fixture {} %", row.source),
            row.percent,
            want,
            0.5,
        )?;
    }
    Ok(log)
}

fn c8_comparison() -> Outcome {
    let mut log = vec![];
    let p = common::project("llm-comparison.manifest");
    let c = compare(&p.comparisons, DEFAULT_TOLERANCE).map_err(|e| e.to_string())?;
    let row = |m: &str| {
        c.rows
            .iter()
            .find(|r| r.model == m)
            .ok_or(format!("no {m} row"))
    };
    let gopher = row("Gopher")?;
    let e = gopher.energy.ok_or("Gopher energy")?;
    expect(
        &mut log,
        "Gopher energy tagged derived",
        e.derived,
        String::new(),
    )?;
    within_rel(&mut log, "Gopher energy (MWh)", e.value.mwh(), 1066.0, 0.01)?;
    let gpt3 = row("GPT-3")?;
    let m = gpt3.emissions.ok_or("GPT-3 emissions")?;
    expect(
        &mut log,
        "GPT-3 emissions tagged derived",
        m.derived,
        String::new(),
    )?;
    within_rel(
        &mut log,
        "GPT-3 emissions (t)",
        m.value.tonnes(),
        502.0,
        0.01,
    )?;
    let bloom = row("BLOOM")?;
    let w = bloom.emissions_with_pue.ok_or("BLOOM x PUE")?;
    expect(
        &mut log,
        "BLOOM x PUE tagged derived",
        w.derived,
        String::new(),
    )?;
    within_rel(
        &mut log,
        "BLOOM emissions x PUE (t)",
        w.value.tonnes(),
        30.0,
        0.02,
    )?;
    let opt = row("OPT")?;
    expect(
        &mut log,
        "OPT flagged at 5%",
        !opt.is_consistent(),
        format!("{} flag(s)", opt.flags.len()),
    )?;
    let others_ok = c
        .rows
        .iter()
        .filter(|r| r.model != "OPT")
        .all(|r| r.is_consistent());
    expect(
        &mut log,
        "GPT-3, Gopher, BLOOM consistent",
        others_ok,
        String::new(),
    )?;
    Ok(log)
}

fn c9_breakdown() -> Outcome {
    let mut log = vec![];
    let b =
        project_breakdown(&common::project("bigscience.manifest")).map_err(|e| e.to_string())?;
    let published = [
        ("176B BLOOM Model", 37.24),
        ("104B Model", 22.92),
        ("1B Model", 13.68),
        ("13B Model", 7.49),
        ("Other Models", 5.53),
        ("Miscellaneous Processes", 4.98),
        ("6B Model", 4.45),
        ("Model Evaluation", 3.71),
    ];
    expect(
        &mut log,
        "row count",
        b.rows.len() == 8,
        format!("{}", b.rows.len()),
    )?;
    for (row, (name, pct)) in b.rows.iter().zip(published) {
        expect(
            &mut log,
            "row order",
            row.process == name,
            row.process.clone(),
        )?;
        within_abs(&mut log, &format!("{name} %"), row.percent, pct, 0.1)?;
    }
    within_rel(
        &mut log,
        "total mass (t)",
        b.total_mass.tonnes(),
        66.29,
        0.002,
    )?;
    within_rel(
        &mut log,
        "energy vs published total",
        b.total_energy.kwh(),
        1_163_088.0,
        0.001,
    )?;
    within_abs(
        &mut log,
        "energy column sum",
        b.total_energy.kwh(),
        1_162_976.0,
        1e-6,
    )?;
    Ok(log)
}

fn c10_workshop() -> Outcome {
    let mut log = vec![];
    let p = common::project("bigscience.manifest");
    let src = workshop_idle_source(&p).map_err(|e| e.to_string())?;
    let x = workshop_extrapolation(&p, src).map_err(|e| e.to_string())?;
    let w = p.workshop.as_ref().ok_or("no workshop")?;
    let a100 = &w.allocations[1];
    let stated = embodied_for_hours(
        &a100.accelerator,
        &a100.server,
        8,
        Duration::from_hours(3.46e6).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    within_rel(
        &mut log,
        "embodied of 3.46 M GPU-h (t)",
        stated.total.tonnes(),
        35.9,
        0.02,
    )?;
    // oracle: per-GPU-hour rate plus an eighth of the server rate
    let oracle = 3.46e6 * (150.0 + 2500.0 / 8.0) / (6.0 * 8760.0 * 0.85) / 1e3;
    within_rel(&mut log, "oracle (t)", stated.total.tonnes(), oracle, 1e-12)?;
    within_rel(
        &mut log,
        "embodied of fixture allocations (t)",
        x.embodied.tonnes(),
        35.9,
        0.02,
    )?;
    expect(
        &mut log,
        "allocation sum mismatch warned",
        x.warnings.iter().any(|w| w.contains("stated")),
        format!("{} M GPU-h allocated", x.gpu_hours.hours() / 1e6),
    )?;
    expect(
        &mut log,
        "two readings",
        x.readings.len() == 2,
        format!("{}", x.readings.len()),
    )?;
    within_rel(
        &mut log,
        "reading A idle (t)",
        x.readings[0].idle.tonnes(),
        21.63,
        0.02,
    )?;
    within_rel(
        &mut log,
        "reading B idle (t)",
        x.readings[1].idle.tonnes(),
        37.42,
        0.02,
    )?;
    expect(
        &mut log,
        "inconsistency warning",
        x.warnings.iter().any(|w| w.contains("disagree")),
        format!("{} warning(s)", x.warnings.len()),
    )?;
    Ok(log)
}

fn c11_inference() -> Outcome {
    let mut log = vec![];
    let (t, requests) = common::inference_inputs();
    let p = common::project("bloom-inference.manifest");
    let inputs = p.inference.as_ref().ok_or("no [inference] section")?;
    let grid = p.profiles.grid(&inputs.grid).map_err(|e| e.to_string())?;
    let s = deployment_summary(
        &t,
        &requests,
        grid,
        inputs.pue,
        Duration::from_minutes(10.0).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    within_rel(
        &mut log,
        "total energy (kWh)",
        s.total_energy.kwh(),
        914.0,
        1e-9,
    )?;
    let split = component_split(&t).map_err(|e| e.to_string())?;
    for (c, want) in [
        (Component::Gpu, 75.3),
        (Component::Cpu, 2.0),
        (Component::Ram, 22.7),
    ] {
        let share = split
            .iter()
            .find(|x| x.component == c)
            .ok_or("missing component")?;
        within_abs(
            &mut log,
            &format!("{c} share %"),
            share.fraction * 100.0,
            want,
            0.1,
        )?;
    }
    let gpu = power_stats(&t, ComponentFilter::One(Component::Gpu)).map_err(|e| e.to_string())?;
    within_rel(
        &mut log,
        "GPU mean power (W)",
        gpu.mean.watts(),
        1664.0,
        0.01,
    )?;
    expect(
        &mut log,
        "GPU extremes inside [1252, 2735] W",
        gpu.min.watts() >= 1252.0 && gpu.max.watts() <= 2735.0,
        format!("{:.1}..{:.1}", gpu.min.watts(), gpu.max.watts()),
    )?;
    let daily = s.daily_mass.kg();
    expect(
        &mut log,
        "daily emissions in [17, 21] kg",
        (17.0..=21.0).contains(&daily),
        format!("{daily:.3}"),
    )?;
    within_rel(
        &mut log,
        "requests per hour",
        s.requests_per_hour,
        558.0,
        0.01,
    )?;
    let baseline = s.baseline.ok_or("no baseline")?;
    within_rel(
        &mut log,
        "zero-request baseline (kWh/10 min)",
        baseline.energy.kwh(),
        0.28,
        0.05,
    )?;
    Ok(log)
}

fn c12_baseline_oracle() -> Outcome {
    let mut log = vec![];
    for (label, mean_requests) in [("regression path", 60.0), ("zero-request path", 1.5)] {
        let mut worst: f64 = 0.0;
        for seed in 0..100 {
            let pairs = linear_bucket_pairs(seed, 2000, 0.28, 0.001, 0.005, mean_requests)
                .map_err(|e| e.to_string())?;
            let b = baseline_energy(&pairs).map_err(|e| e.to_string())?;
            let expected_zero = mean_requests < 5.0;
            let is_zero = matches!(b.method, BaselineMethod::ZeroRequestMean { .. });
            if is_zero != expected_zero {
                return Err(format!("{label}: seed {seed} used {:?}", b.method));
            }
            worst = worst.max(rel(b.energy.kwh(), 0.28));
        }
        expect(
            &mut log,
            label,
            worst <= 0.05,
            format!("worst error {:.3}% over 100 seeds", worst * 100.0),
        )?;
    }
    Ok(log)
}

fn run_property<S: Strategy>(
    log: &mut Vec<String>,
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = property_runner();
    match runner.run(&strategy, test) {
        Ok(()) => {
            log.push(format!("{name}: 1000 cases"));
            Ok(())
        }
        Err(e) => Err(format!("{name}: {e}")),
    }
}

fn c13_properties() -> Outcome {
    let mut log = vec![];
    run_property(
        &mut log,
        "linearity",
        (0.0f64..1e7, 0.0f64..1500.0, 0.0f64..100.0),
        |(e, i, a)| {
            let i = CarbonIntensity::from_g_per_kwh(i).unwrap();
            let base = emissions_from_energy(kwh(e), i).unwrap().kg();
            let scaled = emissions_from_energy(kwh(a * e), i).unwrap().kg();
            prop_assert!((scaled - a * base).abs() <= 1e-9 * scaled.abs().max(1.0));
            Ok(())
        },
    )?;
    run_property(
        &mut log,
        "percentage sum",
        (
            0.0f64..1e6,
            0.0f64..1e6,
            0.0f64..1e6,
            0.0f64..1e3,
            0.0f64..1e3,
            0.0f64..1e3,
        ),
        |(a, b, c, x, y, z)| {
            if a + b + c > 0.0 {
                let r = lca_report(
                    CarbonMass::from_kg(a).unwrap(),
                    CarbonMass::from_kg(b).unwrap(),
                    CarbonMass::from_kg(c).unwrap(),
                )
                .unwrap();
                let sum: f64 = r.rows.iter().map(|r| r.percent).sum();
                prop_assert!((sum - 100.0).abs() <= 1e-6);
            }
            if x + y + z > 0.0 {
                let s = mode_shares(&PartitionPowerModes::new(
                    Power::from_kw(x).unwrap(),
                    Power::from_kw(y).unwrap(),
                    Power::from_kw(z).unwrap(),
                ))
                .unwrap();
                prop_assert!((s.sum() - 1.0).abs() <= 1e-12);
            }
            Ok(())
        },
    )?;
    run_property(
        &mut log,
        "PUE composition",
        (0.0f64..1e6, 1.0f64..3.0, 1.0f64..3.0),
        |(x, a, b)| {
            let m = CarbonMass::from_kg(x).unwrap();
            let twice = apply_pue(apply_pue(m, a).unwrap(), b).unwrap().kg();
            let once = apply_pue(m, a * b).unwrap().kg();
            prop_assert!((twice - once).abs() <= 1e-12 * once.max(1.0));
            Ok(())
        },
    )?;
    run_property(
        &mut log,
        "manifest round-trip",
        common::manifest_strategy(),
        |text| {
            let p = load_manifest(text.as_bytes()).unwrap();
            let written = write_manifest(&p).unwrap();
            let back = load_manifest(written.as_bytes()).unwrap();
            prop_assert_eq!(&p, &back);
            Ok(())
        },
    )?;
    run_property(
        &mut log,
        "energy conservation",
        (
            common::series_strategy(),
            prop::collection::vec(0u64..50, 1..40),
            0i64..40,
        ),
        |(series, counts, offset_min)| {
            let mut rows = vec![];
            for (c, samples) in &series {
                for (minute, w) in samples {
                    rows.push((minute * 60_000, *c, *w));
                }
            }
            let t = ingest_power_csv(common::power_log(&rows).as_bytes(), "p").unwrap();
            let r = ingest_requests_csv(
                common::request_log(common::T0 + offset_min * 60_000, 300, &counts).as_bytes(),
                "r",
            )
            .unwrap();
            if let Ok(j) = bucket_join(&t, &r, Duration::from_minutes(5.0).unwrap()) {
                let kept: f64 = j.pairs.iter().map(|p| p.energy.kwh()).sum();
                let total = t.total_energy().kwh();
                prop_assert!((kept + j.dropped.kwh() - total).abs() <= 1e-9 * total.max(1e-12));
            }
            Ok(())
        },
    )?;
    Ok(log)
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 13] = [
        ("dynamic energy", c1_dynamic_energy),
        ("dynamic emissions", c2_dynamic_emissions),
        ("embodied rates", c3_embodied_rates),
        ("embodied totals", c4_embodied_totals),
        ("idle energy, wall-clock method", c5_idle_wallclock),
        ("partition mode shares", c6_mode_shares),
        ("life-cycle report", c7_lca_report),
        ("model comparison", c8_comparison),
        ("project breakdown", c9_breakdown),
        ("workshop extrapolation", c10_workshop),
        ("inference fixture", c11_inference),
        ("baseline oracle", c12_baseline_oracle),
        ("property suites", c13_properties),
    ];
    let verbose = std::env::args().any(|a| a == "--nocapture" || a == "-v");
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(details) => {
                println!("PASS criterion {:>2}: {name}", i + 1);
                if verbose {
                    for d in details {
                        println!("       {d}");
                    }
                }
            }
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2}: {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "\nacceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

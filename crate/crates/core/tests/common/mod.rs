#![allow(dead_code)]

use std::path::PathBuf;

use mlca_core::profiles::{load_manifest_file, Project};
use mlca_core::telemetry::{ingest_power_csv, ingest_requests_csv, RequestBucket, Telemetry};
use mlca_core::Registries;
use proptest::prelude::*;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn project(name: &str) -> Project {
    load_manifest_file(&fixture(name), &mlca_core::builtin_profiles())
        .unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn inference_inputs() -> (Telemetry, Vec<RequestBucket>) {
    let power = std::fs::read(fixture("bloom-inference-power.csv")).unwrap();
    let requests = std::fs::read(fixture("bloom-inference-requests.csv")).unwrap();
    (
        ingest_power_csv(power.as_slice(), "power").unwrap(),
        ingest_requests_csv(requests.as_slice(), "requests").unwrap(),
    )
}

pub fn empty_registries() -> Registries {
    Registries::default()
}

pub const T0: i64 = 1_658_707_200_000;

pub fn rfc3339(ms: i64) -> String {
    mlca_core::telemetry::format_timestamp(ms)
}

/// Power-form log text from `(offset_ms, component, watts)` rows in the given order.
pub fn power_log(rows: &[(i64, &str, f64)]) -> String {
    let mut s = String::from("#form=power_w,interval=60s\ntimestamp,component,value\n");
    for (t, c, w) in rows {
        s.push_str(&format!("{},{c},{w}\n", rfc3339(T0 + t)));
    }
    s
}

pub fn request_log(start_ms: i64, bucket_s: i64, counts: &[u64]) -> String {
    let mut s = String::from("bucket_start,bucket_seconds,count\n");
    for (i, c) in counts.iter().enumerate() {
        s.push_str(&format!(
            "{},{bucket_s},{c}\n",
            rfc3339(start_ms + i as i64 * bucket_s * 1000)
        ));
    }
    s
}

/// Per-component one-minute power samples, each as `(minute_offset, watts)`.
pub fn series_strategy() -> impl Strategy<Value = Vec<(&'static str, Vec<(i64, f64)>)>> {
    let one = (
        0i64..30,
        prop::collection::vec((1i64..3, 0.0f64..3000.0), 1..120),
    )
        .prop_map(|(start, steps)| {
            let mut t = start;
            steps
                .into_iter()
                .map(|(dt, w)| {
                    let at = t;
                    t += dt;
                    (at, w)
                })
                .collect::<Vec<_>>()
        });
    prop::collection::vec(one, 1..=3).prop_map(|series| {
        ["gpu", "cpu", "ram"]
            .into_iter()
            .zip(series)
            .collect::<Vec<_>>()
    })
}

/// A random but valid single-run manifest.
pub fn manifest_strategy() -> impl Strategy<Value = String> {
    (
        (1u32..64, 1u32..=8),
        (1.0f64..5000.0, 0.05f64..1.0),
        (1.0f64..1000.0, 0.0f64..900.0, 1.0f64..2.0),
        (1.0f64..5000.0, 1.0f64..10.0, 0.1f64..1.0),
        (0.0f64..100.0, 0.0f64..100.0, 0.1f64..200.0),
        (0usize..3, prop::collection::vec(0.0f64..1e6, 0..4)),
    )
        .prop_map(
            |(
                (nodes, per_server),
                (wall_h, fill),
                (tdp, intensity, pue),
                (server_kg, years, usage),
                (infra, idle, dynamic),
                (method, processes),
            )| {
                let gpus = nodes * per_server;
                let gpu_hours = wall_h * gpus as f64 * fill;
                let method = ["wallclock", "fractional", "none"][method];
                let mut s = format!(
                    r#"schema = 1
name = "random"
default_grid = "grid-a"

[[hardware]]
name = "acc"
kind = "accelerator"
tdp = "{tdp} W"
embodied = "{server_kg} kg"
lifetime_years = {years}
avg_usage_fraction = {usage}

[[hardware]]
name = "srv"
kind = "server"
embodied = "{server_kg} kg"
lifetime_years = {years}
avg_usage_fraction = {usage}
accelerators_per_server = {per_server}

[[grid]]
region = "grid-a"
intensity = "{intensity} gCO2/kWh"

[[datacenter]]
name = "dc"
pue = {pue}

[[partition]]
name = "part"
infrastructure = "{infra} kW"
idle = "{idle} kW"
dynamic = "{dynamic} kW"

[[run]]
name = "r"
gpu_hours = "{gpu_hours}h"
wall_clock = "{wall_h}h"
gpu_count = {gpus}
node_count = {nodes}
accelerator = "acc"
server = "srv"
grid = "grid-a"
datacenter = "dc"
partition = "part"
idle_method = "{method}"
"#
                );
                for (i, kwh) in processes.iter().enumerate() {
                    s.push_str(&format!(
                        "\n[[process]]\nname = \"p{i}\"\nenergy = \"{kwh} kWh\"\n"
                    ));
                }
                s
            },
        )
}

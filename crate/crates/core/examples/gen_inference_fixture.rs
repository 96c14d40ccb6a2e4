//! Regenerates the inference telemetry fixtures.
//!
//! ```text
//! cargo run -p mlca-core --example gen_inference_fixture [out_dir]
//! ```

use std::path::PathBuf;

use mlca_core::synth::{inference_fixture, InferenceFixtureSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    let f = inference_fixture(&InferenceFixtureSpec::default())?;
    std::fs::write(dir.join("bloom-inference-power.csv"), &f.power_csv)?;
    std::fs::write(dir.join("bloom-inference-requests.csv"), &f.requests_csv)?;
    for (c, k) in &f.slopes {
        println!("{c}: {k:.4} W per request in flight");
    }
    Ok(())
}

//! Life-cycle carbon accounting for machine-learning workloads.
//!
//! Training runs are charged for amortised hardware manufacturing
//! ([`embodied`]), device energy under load and the idle overhead of the
//! cluster ([`operational`]). Deployed models are assessed from power and
//! request logs ([`telemetry`]). Inputs are declared in TOML manifests
//! ([`profiles`]) and results rendered as json, csv or markdown ([`report`]).

pub mod embodied;
pub mod error;
pub mod operational;
pub mod profiles;
pub mod report;
pub mod synth;
pub mod telemetry;
pub mod units;

pub use error::{Error, ErrorKind, Result};
pub use profiles::{builtin_profiles, load_manifest, load_manifest_file, Project, Registries};
pub use units::{CarbonIntensity, CarbonMass, Duration, Energy, Power};

//! Amortised manufacturing emissions.
//!
//! A device's embodied footprint is spread evenly over the hours it is
//! expected to be in use: `lifetime_years * 8760 h * avg_usage_fraction`.
//! Workloads are charged only for the device-hours they consume.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::profiles::{HardwareProfile, TrainingRun};
use crate::units::{CarbonMass, Duration, HOURS_PER_YEAR};

/// Embodied emissions charged per hour of device use, in kgCO2eq/h.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct EmbodiedRate(f64);

impl EmbodiedRate {
    pub fn kg_per_hour(self) -> f64 {
        self.0
    }

    pub fn charge(self, hours: Duration) -> Result<CarbonMass> {
        Ok(CarbonMass::from_kg(self.0 * hours.hours())?)
    }
}

impl fmt::Display for EmbodiedRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} kg/h", self.0)
    }
}

pub fn hourly_embodied_rate(profile: &HardwareProfile) -> Result<EmbodiedRate> {
    let years = profile.lifetime_years;
    let usage = profile.avg_usage_fraction;
    if !(years.is_finite() && years > 0.0) {
        return Err(Error::Domain(format!(
            "`{}` has lifetime_years {years}; the amortisation period must be positive",
            profile.name
        )));
    }
    if !(usage.is_finite() && usage > 0.0) {
        return Err(Error::Domain(format!(
            "`{}` has avg_usage_fraction {usage}; the amortisation period must be positive",
            profile.name
        )));
    }
    let service_hours = years * HOURS_PER_YEAR * usage;
    Ok(EmbodiedRate(profile.embodied.kg() / service_hours))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmbodiedBreakdown {
    pub server_mass: CarbonMass,
    pub accelerator_mass: CarbonMass,
    pub total: CarbonMass,
    pub server_hours: Duration,
    pub accelerator_hours: Duration,
    pub server_rate: EmbodiedRate,
    pub accelerator_rate: EmbodiedRate,
}

/// Embodied emissions for `gpu_hours` of accelerator time hosted
/// `accelerators_per_server` to a server.
pub fn embodied_for_hours(
    accelerator: &HardwareProfile,
    server: &HardwareProfile,
    accelerators_per_server: u32,
    gpu_hours: Duration,
) -> Result<EmbodiedBreakdown> {
    if accelerators_per_server == 0 {
        return Err(Error::Domain(
            "accelerators_per_server is zero; cannot derive server-hours".to_string(),
        ));
    }
    let server_rate = hourly_embodied_rate(server)?;
    let accelerator_rate = hourly_embodied_rate(accelerator)?;
    let accelerator_hours = gpu_hours;
    let server_hours = gpu_hours.scale(1.0 / accelerators_per_server as f64)?;
    let server_mass = server_rate.charge(server_hours)?;
    let accelerator_mass = accelerator_rate.charge(accelerator_hours)?;
    Ok(EmbodiedBreakdown {
        server_mass,
        accelerator_mass,
        total: server_mass + accelerator_mass,
        server_hours,
        accelerator_hours,
        server_rate,
        accelerator_rate,
    })
}

pub fn run_embodied(run: &TrainingRun) -> Result<EmbodiedBreakdown> {
    embodied_for_hours(
        &run.accelerator,
        &run.server,
        run.accelerators_per_server,
        run.gpu_hours,
    )
}

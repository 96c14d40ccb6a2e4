//! Energy-based operational accounting: dynamic draw from device-hours and
//! TDP, idle and infrastructure overhead from measured partition power
//! modes, and datacenter PUE.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::TrainingRun;
use crate::units::{emissions_from_energy, CarbonMass, Duration, Energy, Power};

/// Average power of a cluster partition split into additive components.
///
/// `infrastructure` is drawn with compute nodes off (network, storage,
/// cooling), `idle` is the extra draw of powered-on but unloaded nodes and
/// `dynamic` the extra draw under the training load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionPowerModes {
    pub infrastructure: Power,
    pub idle: Power,
    pub dynamic: Power,
}

impl PartitionPowerModes {
    pub fn new(infrastructure: Power, idle: Power, dynamic: Power) -> Self {
        Self {
            infrastructure,
            idle,
            dynamic,
        }
    }

    pub fn total(&self) -> Power {
        self.infrastructure + self.idle + self.dynamic
    }

    /// Power held regardless of load.
    pub fn overhead(&self) -> Power {
        self.infrastructure + self.idle
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeShares {
    pub infrastructure: f64,
    pub idle: f64,
    pub dynamic: f64,
}

impl ModeShares {
    pub fn sum(&self) -> f64 {
        self.infrastructure + self.idle + self.dynamic
    }
}

pub fn mode_shares(modes: &PartitionPowerModes) -> Result<ModeShares> {
    let total = modes.total().watts();
    if total <= 0.0 {
        return Err(Error::Domain("partition total power is zero".to_string()));
    }
    let infrastructure = modes.infrastructure.watts() / total;
    let idle = modes.idle.watts() / total;
    // remainder keeps the three shares summing to one
    let dynamic = (1.0 - (infrastructure + idle)).max(0.0);
    Ok(ModeShares {
        infrastructure,
        idle,
        dynamic,
    })
}

pub fn dynamic_energy(run: &TrainingRun) -> Result<Energy> {
    let tdp = run.accelerator.tdp.ok_or_else(|| {
        Error::Invariant(format!(
            "run `{}`: accelerator `{}` has no tdp",
            run.name, run.accelerator.name
        ))
    })?;
    Ok((tdp * run.gpu_hours).scale(run.utilization)?)
}

/// Overhead power held for the full wall-clock duration of the run.
pub fn idle_energy_wallclock(wall_clock: Duration, modes: &PartitionPowerModes) -> Energy {
    modes.overhead() * wall_clock
}

/// Overhead scaled in proportion to dynamic energy.
pub fn idle_energy_fractional(dynamic: Energy, modes: &PartitionPowerModes) -> Result<Energy> {
    let d = modes.dynamic.watts();
    if d <= 0.0 {
        return Err(Error::Domain(
            "partition dynamic power is zero; overhead ratio undefined".to_string(),
        ));
    }
    Ok(dynamic.scale(modes.overhead().watts() / d)?)
}

/// Quantities that can be scaled by a datacenter PUE.
pub trait PueScalable: Sized {
    fn scale_by(self, factor: f64) -> Result<Self>;
}

impl PueScalable for Energy {
    fn scale_by(self, factor: f64) -> Result<Self> {
        Ok(self.scale(factor)?)
    }
}

impl PueScalable for CarbonMass {
    fn scale_by(self, factor: f64) -> Result<Self> {
        Ok(self.scale(factor)?)
    }
}

pub fn apply_pue<T: PueScalable>(value: T, pue: f64) -> Result<T> {
    check_pue(pue)?;
    value.scale_by(pue)
}

pub fn check_pue(pue: f64) -> Result<()> {
    if pue.is_finite() && pue >= 1.0 {
        Ok(())
    } else {
        Err(Error::Invariant(format!("pue >= 1 (got {pue})")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IdleMethod {
    #[default]
    Wallclock,
    Fractional,
    None,
}

impl fmt::Display for IdleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdleMethod::Wallclock => "wallclock",
            IdleMethod::Fractional => "fractional",
            IdleMethod::None => "none",
        })
    }
}

impl FromStr for IdleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wallclock" => Ok(IdleMethod::Wallclock),
            "fractional" => Ok(IdleMethod::Fractional),
            "none" => Ok(IdleMethod::None),
            other => Err(Error::parse(
                "idle_method",
                format!("expected wallclock|fractional|none, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperationalResult {
    pub dynamic_energy: Energy,
    pub idle_energy: Energy,
    pub dynamic_mass: CarbonMass,
    pub idle_mass: CarbonMass,
    pub idle_method: IdleMethod,
}

pub fn run_operational(run: &TrainingRun) -> Result<OperationalResult> {
    let dynamic = dynamic_energy(run)?;
    let idle = match (run.idle_method, &run.partition) {
        (IdleMethod::None, _) => Energy::ZERO,
        (IdleMethod::Wallclock, Some(p)) => idle_energy_wallclock(run.wall_clock, &p.modes()),
        (IdleMethod::Fractional, Some(p)) => idle_energy_fractional(dynamic, &p.modes())?,
        (method, None) => {
            return Err(Error::Invariant(format!(
                "run `{}`: idle_method `{method}` requires a partition",
                run.name
            )))
        }
    };
    Ok(OperationalResult {
        dynamic_energy: dynamic,
        idle_energy: idle,
        dynamic_mass: emissions_from_energy(dynamic, run.grid.intensity)?,
        idle_mass: emissions_from_energy(idle, run.grid.intensity)?,
        idle_method: run.idle_method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kw(v: f64) -> Power {
        Power::from_kw(v).unwrap()
    }

    fn table_modes() -> PartitionPowerModes {
        PartitionPowerModes::new(kw(27.0), kw(64.0), kw(109.0))
    }

    #[test]
    fn table_shares() {
        let s = mode_shares(&table_modes()).unwrap();
        assert!((s.infrastructure - 0.135).abs() < 1e-12);
        assert!((s.idle - 0.32).abs() < 1e-12);
        assert!((s.dynamic - 0.545).abs() < 1e-12);
        assert!((s.sum() - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn degenerate_shares() {
        let s = mode_shares(&PartitionPowerModes::new(kw(5.0), Power::ZERO, Power::ZERO)).unwrap();
        assert_eq!((s.infrastructure, s.idle, s.dynamic), (1.0, 0.0, 0.0));
        let s = mode_shares(&PartitionPowerModes::new(kw(1.0), kw(1.0), kw(1.0))).unwrap();
        for x in [s.infrastructure, s.idle, s.dynamic] {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let zero = PartitionPowerModes::new(Power::ZERO, Power::ZERO, Power::ZERO);
        assert!(matches!(mode_shares(&zero), Err(Error::Domain(_))));
    }

    #[test]
    fn wallclock_idle() {
        let wall = crate::units::parse_duration("118d5h41m").unwrap();
        let back_solved = PartitionPowerModes::new(kw(90.44), Power::ZERO, kw(1.0));
        let e = idle_energy_wallclock(wall, &back_solved);
        assert!((e.kwh() - 256_646.0).abs() / 256_646.0 < 1e-3);
        let e = idle_energy_wallclock(wall, &table_modes());
        // 2837.6833 h x 91 kW
        assert!((e.kwh() - 258_229.18).abs() < 0.01);
        assert!((e.kwh() - 256_646.0).abs() / 256_646.0 < 0.007);
        assert_eq!(
            idle_energy_wallclock(Duration::ZERO, &table_modes()).kwh(),
            0.0
        );
    }

    #[test]
    fn fractional_idle() {
        let e =
            idle_energy_fractional(Energy::from_kwh(433_196.0).unwrap(), &table_modes()).unwrap();
        assert!((e.kwh() - 433_196.0 * 91.0 / 109.0).abs() < 1e-6);
        assert!((e.kwh() - 361_663.0).abs() / 361_663.0 < 1e-4);
        let no_overhead = PartitionPowerModes::new(Power::ZERO, Power::ZERO, kw(3.0));
        assert_eq!(
            idle_energy_fractional(Energy::from_kwh(10.0).unwrap(), &no_overhead)
                .unwrap()
                .kwh(),
            0.0
        );
        let no_dynamic = PartitionPowerModes::new(kw(1.0), kw(1.0), Power::ZERO);
        assert!(idle_energy_fractional(Energy::from_kwh(1.0).unwrap(), &no_dynamic).is_err());
    }

    #[test]
    fn pue_application() {
        let m = CarbonMass::from_tonnes(502.0).unwrap();
        assert!((apply_pue(m, 1.1).unwrap().tonnes() - 552.2).abs() < 1e-9);
        let m = CarbonMass::from_tonnes(25.0).unwrap();
        assert!((apply_pue(m, 1.2).unwrap().tonnes() - 30.0).abs() < 1e-9);
        assert_eq!(apply_pue(m, 1.0).unwrap(), m);
        assert!(matches!(apply_pue(m, 0.99), Err(Error::Invariant(_))));
        assert!(apply_pue(Energy::from_kwh(1.0).unwrap(), f64::NAN).is_err());
    }

    #[test]
    fn idle_method_parsing() {
        assert_eq!(
            "fractional".parse::<IdleMethod>().unwrap(),
            IdleMethod::Fractional
        );
        assert!("sometimes".parse::<IdleMethod>().is_err());
    }
}

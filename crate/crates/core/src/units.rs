//! Dimension-tagged scalar quantities.
//!
//! Every quantity is a newtype over `f64` in a fixed canonical unit. Textual
//! input carries a unit suffix which is checked against the expected
//! dimension, so `"400 kWh"` is rejected where a power is required.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Div, Mul};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const HOURS_PER_DAY: f64 = 24.0;
pub const HOURS_PER_YEAR: f64 = 8760.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantityError {
    #[error("invalid {dimension} value {value}: must be finite and non-negative")]
    Invalid { dimension: Dimension, value: f64 },
    #[error("expected a {expected} but `{text}` is a {found}")]
    DimensionMismatch {
        expected: Dimension,
        found: Dimension,
        text: String,
    },
    #[error("cannot parse `{text}`: unexpected token `{token}`")]
    Parse { text: String, token: String },
    #[error("unknown unit `{unit}` in `{text}`")]
    UnknownUnit { text: String, unit: String },
    #[error("no GWP factor for gas `{0}`")]
    MissingFactor(String),
    #[error("GWP factor for `{gas}` must be positive, got {factor}")]
    InvalidFactor { gas: String, factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dimension {
    Energy,
    Power,
    CarbonMass,
    CarbonIntensity,
    Duration,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dimension::Energy => "energy",
            Dimension::Power => "power",
            Dimension::CarbonMass => "carbon mass",
            Dimension::CarbonIntensity => "carbon intensity",
            Dimension::Duration => "duration",
        };
        f.write_str(s)
    }
}

fn check(dimension: Dimension, value: f64) -> Result<f64, QuantityError> {
    if value.is_finite() && value >= 0.0 {
        // normalise -0.0 so equality and display stay predictable
        Ok(value + 0.0)
    } else {
        Err(QuantityError::Invalid { dimension, value })
    }
}

/// Recognised unit suffixes with their dimension and factor to the canonical unit.
fn unit_table(unit: &str) -> Option<(Dimension, f64)> {
    let entry = match unit {
        "Wh" => (Dimension::Energy, 1e-3),
        "kWh" => (Dimension::Energy, 1.0),
        "MWh" => (Dimension::Energy, 1e3),
        "GWh" => (Dimension::Energy, 1e6),
        "W" => (Dimension::Power, 1.0),
        "kW" => (Dimension::Power, 1e3),
        "MW" => (Dimension::Power, 1e6),
        "g" | "gCO2eq" => (Dimension::CarbonMass, 1e-3),
        "kg" | "kgCO2eq" => (Dimension::CarbonMass, 1.0),
        "t" | "tCO2eq" => (Dimension::CarbonMass, 1e3),
        "gCO2/kWh" | "gCO2eq/kWh" | "g/kWh" => (Dimension::CarbonIntensity, 1.0),
        "kgCO2/kWh" | "kgCO2eq/kWh" | "kg/kWh" => (Dimension::CarbonIntensity, 1e3),
        _ => return None,
    };
    Some(entry)
}

/// Parses `"<number> <unit>"` (space optional) into the canonical value of `expected`.
fn parse_with_unit(text: &str, expected: Dimension) -> Result<f64, QuantityError> {
    let trimmed = text.trim();
    let split = trimmed
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E' | '_')))
        .unwrap_or(trimmed.len());
    let (num, unit) = trimmed.split_at(split);
    let unit = unit.trim();
    let number: f64 = num
        .replace('_', "")
        .parse()
        .map_err(|_| QuantityError::Parse {
            text: text.to_string(),
            token: num.to_string(),
        })?;
    if unit.is_empty() {
        return Err(QuantityError::Parse {
            text: text.to_string(),
            token: "<missing unit>".to_string(),
        });
    }
    let (dimension, factor) = unit_table(unit).ok_or_else(|| QuantityError::UnknownUnit {
        text: text.to_string(),
        unit: unit.to_string(),
    })?;
    if dimension != expected {
        return Err(QuantityError::DimensionMismatch {
            expected,
            found: dimension,
            text: text.to_string(),
        });
    }
    check(expected, number * factor)
}

macro_rules! quantity {
    ($(#[$meta:meta])* $name:ident, $dim:expr, $canon:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
        pub struct $name(f64);

        impl $name {
            pub const ZERO: $name = $name(0.0);
            pub const DIMENSION: Dimension = $dim;

            fn canonical(value: f64) -> Result<Self, QuantityError> {
                check($dim, value).map($name)
            }

            pub fn is_zero(&self) -> bool {
                self.0 == 0.0
            }

            /// Multiplies by a non-negative dimensionless factor.
            pub fn scale(self, factor: f64) -> Result<Self, QuantityError> {
                Self::canonical(self.0 * factor)
            }
        }

        impl FromStr for $name {
            type Err = QuantityError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                parse_with_unit(s, $dim).map($name)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{} {}", self.0, $canon)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let text = String::deserialize(deserializer)?;
                text.parse().map_err(serde::de::Error::custom)
            }
        }

        impl Add for $name {
            type Output = $name;

            fn add(self, rhs: $name) -> $name {
                $name(self.0 + rhs.0)
            }
        }

        impl std::iter::Sum for $name {
            fn sum<I: Iterator<Item = $name>>(iter: I) -> $name {
                $name(iter.map(|q| q.0).sum())
            }
        }
    };
}

quantity!(
    /// Energy, canonical unit kWh.
    Energy,
    Dimension::Energy,
    "kWh"
);
quantity!(
    /// Power, canonical unit W.
    Power,
    Dimension::Power,
    "W"
);
quantity!(
    /// Mass of CO2-equivalent, canonical unit kg.
    CarbonMass,
    Dimension::CarbonMass,
    "kg"
);
quantity!(
    /// Grid carbon intensity in gCO2eq per kWh.
    CarbonIntensity,
    Dimension::CarbonIntensity,
    "gCO2/kWh"
);

impl Energy {
    pub fn from_wh(v: f64) -> Result<Self, QuantityError> {
        Self::canonical(v / 1e3)
    }
    pub fn from_kwh(v: f64) -> Result<Self, QuantityError> {
        Self::canonical(v)
    }
    pub fn from_mwh(v: f64) -> Result<Self, QuantityError> {
        Self::canonical(v * 1e3)
    }
    pub fn wh(self) -> f64 {
        self.0 * 1e3
    }
    pub fn kwh(self) -> f64 {
        self.0
    }
    pub fn mwh(self) -> f64 {
        self.0 / 1e3
    }
}

impl Power {
    pub fn from_watts(v: f64) -> Result<Self, QuantityError> {
        Self::canonical(v)
    }
    pub fn from_kw(v: f64) -> Result<Self, QuantityError> {
        Self::canonical(v * 1e3)
    }
    pub fn watts(self) -> f64 {
        self.0
    }
    pub fn kw(self) -> f64 {
        self.0 / 1e3
    }
}

impl CarbonMass {
    pub fn from_grams(v: f64) -> Result<Self, QuantityError> {
        Self::canonical(v / 1e3)
    }
    pub fn from_kg(v: f64) -> Result<Self, QuantityError> {
        Self::canonical(v)
    }
    pub fn from_tonnes(v: f64) -> Result<Self, QuantityError> {
        Self::canonical(v * 1e3)
    }
    pub fn grams(self) -> f64 {
        self.0 * 1e3
    }
    pub fn kg(self) -> f64 {
        self.0
    }
    pub fn tonnes(self) -> f64 {
        self.0 / 1e3
    }
}

/// Intensities above this are accepted but reported as implausible.
pub const PLAUSIBLE_INTENSITY_MAX: f64 = 1500.0;

impl CarbonIntensity {
    pub fn from_g_per_kwh(v: f64) -> Result<Self, QuantityError> {
        Self::canonical(v)
    }
    pub fn g_per_kwh(self) -> f64 {
        self.0
    }
    /// Accepts `429 gCO2/kWh` or a bare number of g/kWh.
    pub fn parse_lenient(text: &str) -> Result<Self, QuantityError> {
        match text.trim().parse::<f64>() {
            Ok(v) => Self::from_g_per_kwh(v),
            Err(_) => text.parse(),
        }
    }

    pub fn plausibility_warning(self) -> Option<String> {
        (self.0 > PLAUSIBLE_INTENSITY_MAX).then(|| {
            format!(
                "carbon intensity {} gCO2/kWh exceeds {} and is probably mis-entered",
                self.0, PLAUSIBLE_INTENSITY_MAX
            )
        })
    }
}

/// Elapsed time, canonical unit hours.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Duration(f64);

impl Duration {
    pub const ZERO: Duration = Duration(0.0);

    pub fn from_hours(v: f64) -> Result<Self, QuantityError> {
        check(Dimension::Duration, v).map(Duration)
    }
    pub fn from_minutes(v: f64) -> Result<Self, QuantityError> {
        Self::from_hours(v / 60.0)
    }
    pub fn from_seconds(v: f64) -> Result<Self, QuantityError> {
        Self::from_hours(v / 3600.0)
    }
    pub fn from_days(v: f64) -> Result<Self, QuantityError> {
        Self::from_hours(v * HOURS_PER_DAY)
    }
    pub fn hours(self) -> f64 {
        self.0
    }
    pub fn days(self) -> f64 {
        self.0 / HOURS_PER_DAY
    }
    pub fn seconds(self) -> f64 {
        self.0 * 3600.0
    }
    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
    pub fn scale(self, factor: f64) -> Result<Self, QuantityError> {
        Self::from_hours(self.0 * factor)
    }
}

impl Add for Duration {
    type Output = Duration;

    fn add(self, rhs: Duration) -> Duration {
        Duration(self.0 + rhs.0)
    }
}

impl std::iter::Sum for Duration {
    fn sum<I: Iterator<Item = Duration>>(iter: I) -> Duration {
        Duration(iter.map(|d| d.0).sum())
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}h", self.0)
    }
}

impl FromStr for Duration {
    type Err = QuantityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_duration(s)
    }
}

impl Serialize for Duration {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Duration {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_duration(&text).map_err(serde::de::Error::custom)
    }
}

/// Parses `NdNhNm` composites (any subset, in that order) or plain decimal hours.
///
/// `"118d5h41m"` is 2837.68333… h, `"18d"` is 432 h, `"12.5"` and `"12.5h"`
/// are 12.5 h. Whitespace between components is allowed.
pub fn parse_duration(text: &str) -> Result<Duration, QuantityError> {
    let trimmed = text.trim();
    let parse_err = |token: &str| QuantityError::Parse {
        text: text.to_string(),
        token: token.to_string(),
    };
    if trimmed.is_empty() {
        return Err(parse_err("<empty>"));
    }
    if let Ok(hours) = trimmed.parse::<f64>() {
        return Duration::from_hours(hours);
    }

    let mut hours = 0.0;
    let mut last_rank = 0u8;
    let mut rest = trimmed;
    while !rest.is_empty() {
        let digits = rest
            .find(|c: char| !(c.is_ascii_digit() || c == '.'))
            .unwrap_or(rest.len());
        let (num, tail) = rest.split_at(digits);
        let mut unit_chars = tail.chars();
        let unit = unit_chars.next();
        let token = &rest[..digits + unit.map_or(0, char::len_utf8)];
        if num.is_empty() {
            return Err(parse_err(token));
        }
        let value: f64 = num.parse().map_err(|_| parse_err(token))?;
        let (rank, factor) = match unit {
            Some('d') => (1, HOURS_PER_DAY),
            Some('h') => (2, 1.0),
            Some('m') => (3, 1.0 / 60.0),
            _ => return Err(parse_err(token)),
        };
        if rank <= last_rank {
            return Err(parse_err(token));
        }
        last_rank = rank;
        hours += value * factor;
        rest = unit_chars.as_str().trim_start();
    }
    Duration::from_hours(hours)
}

impl Mul<Duration> for Power {
    type Output = Energy;

    fn mul(self, rhs: Duration) -> Energy {
        Energy(self.0 * rhs.0 / 1e3)
    }
}

impl Div<Duration> for Energy {
    type Output = Option<Power>;

    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Duration) -> Option<Power> {
        (rhs.0 > 0.0).then(|| Power(self.0 * 1e3 / rhs.0))
    }
}

/// Emissions from consuming `energy` on a grid of the given intensity.
pub fn emissions_from_energy(
    energy: Energy,
    intensity: CarbonIntensity,
) -> Result<CarbonMass, QuantityError> {
    check(Dimension::Energy, energy.0)?;
    check(Dimension::CarbonIntensity, intensity.0)?;
    CarbonMass::from_grams(energy.kwh() * intensity.g_per_kwh())
}

/// 100-year global-warming potential of a gas relative to CO2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwpFactor {
    pub gas: String,
    pub factor: f64,
}

impl GwpFactor {
    pub fn new(gas: impl Into<String>, factor: f64) -> Result<Self, QuantityError> {
        let gas = gas.into();
        if factor.is_finite() && factor > 0.0 {
            Ok(Self { gas, factor })
        } else {
            Err(QuantityError::InvalidFactor { gas, factor })
        }
    }
}

/// Converts a mass of some gas into CO2-equivalent.
pub fn co2eq_from_gas(mass: CarbonMass, gwp: &GwpFactor) -> Result<CarbonMass, QuantityError> {
    if !(gwp.factor.is_finite() && gwp.factor > 0.0) {
        return Err(QuantityError::InvalidFactor {
            gas: gwp.gas.clone(),
            factor: gwp.factor,
        });
    }
    mass.scale(gwp.factor)
}

/// Lookup table of GWP factors keyed by lower-case gas name.
#[derive(Debug, Clone, PartialEq)]
pub struct GwpTable {
    factors: BTreeMap<String, f64>,
}

impl Default for GwpTable {
    /// CO2 (1) and methane (25, the older 100-year IPCC figure).
    fn default() -> Self {
        let mut factors = BTreeMap::new();
        factors.insert("co2".to_string(), 1.0);
        factors.insert("ch4".to_string(), 25.0);
        factors.insert("methane".to_string(), 25.0);
        Self { factors }
    }
}

impl GwpTable {
    pub fn empty() -> Self {
        Self {
            factors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, factor: GwpFactor) {
        self.factors
            .insert(factor.gas.to_lowercase(), factor.factor);
    }

    pub fn get(&self, gas: &str) -> Result<GwpFactor, QuantityError> {
        self.factors
            .get(&gas.to_lowercase())
            .map(|&factor| GwpFactor {
                gas: gas.to_string(),
                factor,
            })
            .ok_or_else(|| QuantityError::MissingFactor(gas.to_string()))
    }

    pub fn convert(&self, gas: &str, mass: CarbonMass) -> Result<CarbonMass, QuantityError> {
        co2eq_from_gas(mass, &self.get(gas)?)
    }
}

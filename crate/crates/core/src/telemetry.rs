//! Inference-deployment telemetry: per-component power logs and request
//! counts from a serving instance.
//!
//! Power CSV layout:
//!
//! ```text
//! #form=energy_kwh_per_interval,interval=60s     (or  #form=power_w[,interval=300s])
//! timestamp,component,value
//! 2022-07-25T00:00:00Z,gpu,0.0277
//! ```
//!
//! Each sample covers `[timestamp, timestamp + interval)`. For the power
//! form the interval is inferred as the most common spacing between
//! consecutive samples unless declared.
//!
//! Request CSV layout: `bucket_start,bucket_seconds,count`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operational::apply_pue;
use crate::profiles::GridProfile;
use crate::units::{emissions_from_energy, CarbonMass, Duration, Energy, Power};

const MS_PER_HOUR: f64 = 3_600_000.0;

/// Minimum number of joined buckets for a baseline estimate.
pub const MIN_BASELINE_BUCKETS: usize = 10;
/// Zero-request buckets needed before their mean is used directly.
pub const MIN_ZERO_REQUEST_BUCKETS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Gpu,
    Cpu,
    Ram,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Gpu, Component::Cpu, Component::Ram];
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Gpu => "gpu",
            Component::Cpu => "cpu",
            Component::Ram => "ram",
        })
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gpu" => Ok(Component::Gpu),
            "cpu" => Ok(Component::Cpu),
            "ram" => Ok(Component::Ram),
            other => Err(format!("unknown component `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SampleForm {
    /// Each value is the energy (kWh) consumed over one fixed interval.
    EnergyPerInterval { interval_ms: i64 },
    /// Each value is an instantaneous power reading in watts.
    Power { interval_ms: Option<i64> },
}

/// One sample normalised to the energy consumed over `[start_ms, start_ms + span_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub start_ms: i64,
    pub span_ms: i64,
    pub energy: Energy,
}

impl Sample {
    pub fn end_ms(&self) -> i64 {
        self.start_ms + self.span_ms
    }

    pub fn power_watts(&self) -> f64 {
        if self.span_ms == 0 {
            0.0
        } else {
            self.energy.kwh() * 1e3 * MS_PER_HOUR / self.span_ms as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentSeries {
    pub component: Component,
    pub interval_ms: i64,
    pub samples: Vec<Sample>,
}

impl ComponentSeries {
    pub fn energy(&self) -> Energy {
        self.samples.iter().map(|s| s.energy).sum()
    }

    fn start_ms(&self) -> Option<i64> {
        self.samples.first().map(|s| s.start_ms)
    }

    fn end_ms(&self) -> Option<i64> {
        self.samples.last().map(Sample::end_ms)
    }
}

/// Validated per-component sample series from one power log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Telemetry {
    pub form: SampleForm,
    pub series: BTreeMap<Component, ComponentSeries>,
    /// Total time not covered by samples, summed over components.
    pub gap_ms: i64,
    pub warnings: Vec<String>,
}

impl Telemetry {
    pub fn is_empty(&self) -> bool {
        self.series.values().all(|s| s.samples.is_empty())
    }

    pub fn total_energy(&self) -> Energy {
        self.series.values().map(ComponentSeries::energy).sum()
    }

    /// Earliest sample start to latest sample end over all components.
    pub fn span_ms(&self) -> Option<(i64, i64)> {
        let start = self.series.values().filter_map(|s| s.start_ms()).min()?;
        let end = self.series.values().filter_map(|s| s.end_ms()).max()?;
        Some((start, end))
    }

    /// Interval during which every component has data.
    fn common_span_ms(&self) -> Option<(i64, i64)> {
        let start = self.series.values().filter_map(|s| s.start_ms()).max()?;
        let end = self.series.values().filter_map(|s| s.end_ms()).min()?;
        (end > start).then_some((start, end))
    }

    pub fn duration(&self) -> Duration {
        match self.span_ms() {
            Some((s, e)) => Duration::from_seconds((e - s) as f64 / 1e3).unwrap_or_default(),
            None => Duration::ZERO,
        }
    }
}

fn parse_timestamp(text: &str) -> std::result::Result<i64, String> {
    DateTime::parse_from_rfc3339(text.trim())
        .map(|t| t.with_timezone(&Utc).timestamp_millis())
        .map_err(|e| format!("bad RFC-3339 timestamp `{text}`: {e}"))
}

pub fn format_timestamp(ms: i64) -> String {
    DateTime::<Utc>::from_timestamp_millis(ms)
        .map(|t| t.to_rfc3339_opts(SecondsFormat::AutoSi, true))
        .unwrap_or_else(|| ms.to_string())
}

/// Parses `60s`, `5m`, `1h` or bare seconds into milliseconds.
fn parse_interval(text: &str) -> std::result::Result<i64, String> {
    let t = text.trim();
    let (num, factor) = if let Some(n) = t.strip_suffix("ms") {
        (n, 1.0)
    } else if let Some(n) = t.strip_suffix('s') {
        (n, 1e3)
    } else if let Some(n) = t.strip_suffix('m') {
        (n, 60e3)
    } else if let Some(n) = t.strip_suffix('h') {
        (n, 3600e3)
    } else {
        (t, 1e3)
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("bad interval `{text}`"))?;
    let ms = (v * factor).round();
    if ms.is_finite() && ms > 0.0 {
        Ok(ms as i64)
    } else {
        Err(format!("interval must be positive, got `{text}`"))
    }
}

fn parse_form(directive: &str) -> std::result::Result<SampleForm, String> {
    let mut form = None;
    let mut interval = None;
    for part in directive.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("malformed directive `{part}`"))?;
        match k.trim() {
            "form" => form = Some(v.trim().to_string()),
            "interval" => interval = Some(parse_interval(v)?),
            other => return Err(format!("unknown directive `{other}`")),
        }
    }
    match form.as_deref() {
        Some("energy_kwh_per_interval") => interval
            .map(|interval_ms| SampleForm::EnergyPerInterval { interval_ms })
            .ok_or_else(|| "energy_kwh_per_interval requires interval=".to_string()),
        Some("power_w") => Ok(SampleForm::Power {
            interval_ms: interval,
        }),
        Some(other) => Err(format!("unknown form `{other}`")),
        None => Err("missing form= directive".to_string()),
    }
}

fn most_common_spacing(times: &[i64]) -> Option<i64> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for w in times.windows(2) {
        *counts.entry(w[1] - w[0]).or_default() += 1;
    }
    // ties resolve to the smallest spacing
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(d, _)| d)
}

/// Reads a power log. See the module docs for the layout.
pub fn ingest_power_csv<R: Read>(source: R, source_name: &str) -> Result<Telemetry> {
    let mut reader = BufReader::new(source);
    let mut line = String::new();
    let mut line_no = 0usize;
    let mut form = None;
    let header = loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break None;
        }
        line_no += 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(directive) = t.strip_prefix('#') {
            if directive.trim_start().starts_with("form=") {
                form = Some(
                    parse_form(directive.trim())
                        .map_err(|m| Error::parse(format!("{source_name}:{line_no}"), m))?,
                );
            }
            continue;
        }
        break Some(t.to_string());
    };
    let form = form.ok_or_else(|| {
        Error::parse(
            source_name,
            "missing `#form=...` declaration before the header",
        )
    })?;
    let header = header.ok_or_else(|| Error::parse(source_name, "missing header row"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| {
        columns.iter().position(|c| *c == name).ok_or_else(|| {
            Error::parse(
                format!("{source_name}:{line_no}"),
                format!("header lacks `{name}` column"),
            )
        })
    };
    let (ts_col, comp_col, val_col) = (col("timestamp")?, col("component")?, col("value")?);
    let header_line = line_no;

    let mut raw: BTreeMap<Component, Vec<(i64, f64)>> = BTreeMap::new();
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    for record in csv.records() {
        let record = record.map_err(|e| Error::parse(source_name, e))?;
        let row = header_line + record.position().map_or(0, |p| p.line() as usize);
        let at = |msg: String| Error::parse(format!("{source_name}:{row}"), msg);
        let field = |i: usize| {
            record
                .get(i)
                .ok_or_else(|| at(format!("missing column {}", i + 1)))
        };
        let ts = parse_timestamp(field(ts_col)?).map_err(at)?;
        let component: Component = field(comp_col)?.parse().map_err(at)?;
        let value: f64 = field(val_col)?
            .parse()
            .map_err(|_| at(format!("bad value `{}`", record.get(val_col).unwrap_or(""))))?;
        if !value.is_finite() || value < 0.0 {
            return Err(at(format!(
                "value must be finite and non-negative, got {value}"
            )));
        }
        let samples = raw.entry(component).or_default();
        if let Some(&(prev, _)) = samples.last() {
            if ts <= prev {
                return Err(at(format!(
                    "timestamp {} for {component} is not after the previous sample {}",
                    format_timestamp(ts),
                    format_timestamp(prev)
                )));
            }
        }
        samples.push((ts, value));
    }

    let mut series = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut gap_ms = 0i64;
    for (component, points) in raw {
        let times: Vec<i64> = points.iter().map(|p| p.0).collect();
        let interval_ms = match form {
            SampleForm::EnergyPerInterval { interval_ms } => interval_ms,
            SampleForm::Power {
                interval_ms: Some(i),
            } => i,
            SampleForm::Power { interval_ms: None } => {
                most_common_spacing(&times).ok_or_else(|| {
                    Error::parse(
                        source_name,
                        format!(
                            "{component}: cannot infer the sampling interval from one sample; \
                             declare interval= in the form line"
                        ),
                    )
                })?
            }
        };
        let mut samples = Vec::with_capacity(points.len());
        let mut component_gap = 0i64;
        let mut irregular = 0usize;
        for (i, &(start_ms, value)) in points.iter().enumerate() {
            let next = points.get(i + 1).map(|p| p.0);
            if let Some(n) = next {
                let d = n - start_ms;
                if d > interval_ms {
                    component_gap += d - interval_ms;
                } else if d < interval_ms {
                    irregular += 1;
                }
            }
            let (span_ms, energy) = match form {
                SampleForm::EnergyPerInterval { .. } => (interval_ms, Energy::from_kwh(value)?),
                SampleForm::Power { .. } => {
                    let span = next.map_or(interval_ms, |n| (n - start_ms).min(interval_ms));
                    let p = Power::from_watts(value)?;
                    (span, p * Duration::from_hours(span as f64 / MS_PER_HOUR)?)
                }
            };
            samples.push(Sample {
                start_ms,
                span_ms,
                energy,
            });
        }
        if component_gap > 0 {
            warnings.push(format!(
                "{component}: {:.3} h of gaps in the sample series",
                component_gap as f64 / MS_PER_HOUR
            ));
        }
        if irregular > 0 {
            warnings.push(format!(
                "{component}: {irregular} samples closer together than the {interval_ms} ms interval"
            ));
        }
        gap_ms += component_gap;
        series.insert(
            component,
            ComponentSeries {
                component,
                interval_ms,
                samples,
            },
        );
    }
    Ok(Telemetry {
        form,
        series,
        gap_ms,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RequestBucket {
    pub start_ms: i64,
    pub length_ms: i64,
    pub count: u64,
}

impl RequestBucket {
    pub fn end_ms(&self) -> i64 {
        self.start_ms + self.length_ms
    }
}

/// Reads `bucket_start,bucket_seconds,count` rows. Buckets must be in time
/// order and must not overlap.
pub fn ingest_requests_csv<R: Read>(source: R, source_name: &str) -> Result<Vec<RequestBucket>> {
    let mut csv = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = csv
        .headers()
        .map_err(|e| Error::parse(source_name, e))?
        .clone();
    let expected = ["bucket_start", "bucket_seconds", "count"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            format!("{source_name}:1"),
            format!("expected header `{}`", expected.join(",")),
        ));
    }
    let mut out: Vec<RequestBucket> = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| Error::parse(source_name, e))?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let at = |msg: String| Error::parse(format!("{source_name}:{row}"), msg);
        let start_ms = parse_timestamp(&record[0]).map_err(at)?;
        let seconds: f64 = record[1]
            .parse()
            .map_err(|_| at(format!("bad bucket_seconds `{}`", &record[1])))?;
        let length_ms = (seconds * 1e3).round();
        if !(length_ms.is_finite() && length_ms > 0.0) {
            return Err(at(format!(
                "bucket_seconds must be positive, got {seconds}"
            )));
        }
        let count: u64 = record[2]
            .parse()
            .map_err(|_| at(format!("bad count `{}`", &record[2])))?;
        let bucket = RequestBucket {
            start_ms,
            length_ms: length_ms as i64,
            count,
        };
        if let Some(prev) = out.last() {
            if bucket.start_ms < prev.end_ms() {
                return Err(at(format!(
                    "bucket at {} overlaps or precedes the previous bucket",
                    format_timestamp(bucket.start_ms)
                )));
            }
        }
        out.push(bucket);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentShare {
    pub component: Component,
    pub energy: Energy,
    pub fraction: f64,
}

pub fn component_split(telemetry: &Telemetry) -> Result<Vec<ComponentShare>> {
    if telemetry.is_empty() {
        return Err(Error::EmptyInput("power series has no samples".to_string()));
    }
    let energies: Vec<(Component, Energy)> = telemetry
        .series
        .values()
        .filter(|s| !s.samples.is_empty())
        .map(|s| (s.component, s.energy()))
        .collect();
    let total: f64 = energies.iter().map(|(_, e)| e.kwh()).sum();
    if total <= 0.0 {
        return Err(Error::Domain(
            "total energy is zero; component fractions undefined".to_string(),
        ));
    }
    Ok(energies
        .into_iter()
        .map(|(component, energy)| ComponentShare {
            component,
            energy,
            fraction: energy.kwh() / total,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentFilter {
    One(Component),
    /// Instance total: components summed at each common timestamp.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerStats {
    pub mean: Power,
    pub min: Power,
    pub max: Power,
}

fn stats_from(points: impl Iterator<Item = (f64, f64, i64)>) -> Option<PowerStats> {
    // (power W, energy kWh, span ms)
    let mut energy = 0.0;
    let mut span = 0i64;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut any = false;
    for (p, e, s) in points {
        any = true;
        energy += e;
        span += s;
        min = min.min(p);
        max = max.max(p);
    }
    if !any || span == 0 {
        return None;
    }
    let mean = energy * 1e3 * MS_PER_HOUR / span as f64;
    Some(PowerStats {
        mean: Power::from_watts(mean).ok()?,
        min: Power::from_watts(min).ok()?,
        max: Power::from_watts(max).ok()?,
    })
}

/// Time-weighted mean and sample extremes of power.
pub fn power_stats(telemetry: &Telemetry, filter: ComponentFilter) -> Result<PowerStats> {
    let empty = || Error::EmptyInput(format!("no samples match {filter:?}"));
    match filter {
        ComponentFilter::One(c) => {
            let series = telemetry.series.get(&c).ok_or_else(empty)?;
            stats_from(
                series
                    .samples
                    .iter()
                    .map(|s| (s.power_watts(), s.energy.kwh(), s.span_ms)),
            )
            .ok_or_else(empty)
        }
        ComponentFilter::All => {
            let present: Vec<&ComponentSeries> = telemetry
                .series
                .values()
                .filter(|s| !s.samples.is_empty())
                .collect();
            // start -> (power, energy, span, components seen)
            let mut grouped: BTreeMap<i64, (f64, f64, i64, usize)> = BTreeMap::new();
            for s in &present {
                for x in &s.samples {
                    let g = grouped.entry(x.start_ms).or_default();
                    g.0 += x.power_watts();
                    g.1 += x.energy.kwh();
                    g.2 = g.2.max(x.span_ms);
                    g.3 += 1;
                }
            }
            if grouped.values().any(|g| g.3 != present.len()) {
                return Err(Error::Invariant(
                    "components are not sampled at common timestamps; instance power is undefined"
                        .to_string(),
                ));
            }
            stats_from(grouped.into_values().map(|(p, e, s, _)| (p, e, s))).ok_or_else(empty)
        }
    }
}

/// Request count and instance energy for one aligned time bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BucketPair {
    pub start_ms: i64,
    pub requests: u64,
    pub energy: Energy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketJoin {
    pub bucket_ms: i64,
    pub pairs: Vec<BucketPair>,
    /// Energy falling outside the retained buckets.
    pub dropped: Energy,
}

impl BucketJoin {
    /// `requests,energy_kwh` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_start,requests,energy_kwh\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{},{},{}\n",
                format_timestamp(p.start_ms),
                p.requests,
                p.energy.kwh()
            ));
        }
        out
    }
}

/// Integrates instance energy over buckets aligned to multiples of
/// `bucket_length` since the Unix epoch and pairs it with request counts.
///
/// A bucket is kept only when power data spans it for every component and
/// request buckets cover it completely; everything else is counted as dropped.
pub fn bucket_join(
    telemetry: &Telemetry,
    requests: &[RequestBucket],
    bucket_length: Duration,
) -> Result<BucketJoin> {
    let bucket_ms = (bucket_length.seconds() * 1e3).round() as i64;
    if bucket_ms <= 0 {
        return Err(Error::Domain("bucket length must be positive".to_string()));
    }
    let (power_start, power_end) = telemetry.common_span_ms().ok_or(Error::NoOverlap)?;

    let mut coverage: BTreeMap<i64, (i64, u64)> = BTreeMap::new();
    for r in requests {
        let w = r.start_ms.div_euclid(bucket_ms);
        if (r.end_ms() - 1).div_euclid(bucket_ms) != w {
            return Err(Error::Invariant(format!(
                "request bucket at {} ({} s) crosses a {} s bucket boundary",
                format_timestamp(r.start_ms),
                r.length_ms / 1000,
                bucket_ms / 1000
            )));
        }
        let c = coverage.entry(w).or_default();
        c.0 += r.length_ms;
        c.1 += r.count;
    }
    let mut kept: BTreeMap<i64, (u64, f64)> = coverage
        .into_iter()
        .filter(|&(w, (covered, _))| {
            covered == bucket_ms && w * bucket_ms >= power_start && (w + 1) * bucket_ms <= power_end
        })
        .map(|(w, (_, count))| (w, (count, 0.0)))
        .collect();
    if kept.is_empty() {
        return Err(Error::NoOverlap);
    }

    let mut dropped = 0.0;
    for series in telemetry.series.values() {
        for s in &series.samples {
            let kwh = s.energy.kwh();
            if s.span_ms == 0 {
                dropped += kwh;
                continue;
            }
            let first = s.start_ms.div_euclid(bucket_ms);
            let last = (s.end_ms() - 1).div_euclid(bucket_ms);
            for w in first..=last {
                let lo = s.start_ms.max(w * bucket_ms);
                let hi = s.end_ms().min((w + 1) * bucket_ms);
                let part = if first == last {
                    kwh
                } else {
                    kwh * (hi - lo) as f64 / s.span_ms as f64
                };
                match kept.get_mut(&w) {
                    Some(slot) => slot.1 += part,
                    None => dropped += part,
                }
            }
        }
    }

    let pairs = kept
        .into_iter()
        .map(|(w, (requests, kwh))| {
            Ok(BucketPair {
                start_ms: w * bucket_ms,
                requests,
                energy: Energy::from_kwh(kwh)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BucketJoin {
        bucket_ms,
        pairs,
        dropped: Energy::from_kwh(dropped)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum BaselineMethod {
    ZeroRequestMean {
        buckets: usize,
    },
    Regression {
        slope_kwh_per_request: f64,
        buckets: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Baseline {
    pub energy: Energy,
    pub method: BaselineMethod,
}

/// Ordinary least squares of `y` on `x`; returns `(intercept, slope)`.
fn least_squares(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Energy per bucket consumed with no requests being served.
///
/// Uses the mean of zero-request buckets when there are enough of them,
/// otherwise the intercept of a least-squares fit of energy on request
/// count, clamped at zero.
pub fn baseline_energy(pairs: &[BucketPair]) -> Result<Baseline> {
    if pairs.len() < MIN_BASELINE_BUCKETS {
        return Err(Error::InsufficientData {
            what: "buckets",
            needed: MIN_BASELINE_BUCKETS,
            got: pairs.len(),
        });
    }
    let zeros: Vec<f64> = pairs
        .iter()
        .filter(|p| p.requests == 0)
        .map(|p| p.energy.kwh())
        .collect();
    if zeros.len() >= MIN_ZERO_REQUEST_BUCKETS {
        let mean = zeros.iter().sum::<f64>() / zeros.len() as f64;
        return Ok(Baseline {
            energy: Energy::from_kwh(mean)?,
            method: BaselineMethod::ZeroRequestMean {
                buckets: zeros.len(),
            },
        });
    }
    let points: Vec<(f64, f64)> = pairs
        .iter()
        .map(|p| (p.requests as f64, p.energy.kwh()))
        .collect();
    let (intercept, slope) = least_squares(&points).ok_or_else(|| {
        Error::Domain("every bucket has the same request count; cannot extrapolate to zero".into())
    })?;
    Ok(Baseline {
        energy: Energy::from_kwh(intercept.max(0.0))?,
        method: BaselineMethod::Regression {
            slope_kwh_per_request: slope,
            buckets: pairs.len(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeploymentSummary {
    pub total_energy: Energy,
    pub per_component: Vec<ComponentShare>,
    pub component_power: BTreeMap<Component, PowerStats>,
    pub mean_power: Power,
    pub min_power: Power,
    pub max_power: Power,
    pub bucket_minutes: f64,
    pub baseline: Option<Baseline>,
    pub total_requests: u64,
    pub requests_per_hour: f64,
    pub duration: Duration,
    pub grid: GridProfile,
    pub pue: f64,
    pub total_mass: CarbonMass,
    pub daily_mass: CarbonMass,
    pub warnings: Vec<String>,
}

pub fn deployment_summary(
    telemetry: &Telemetry,
    requests: &[RequestBucket],
    grid: &GridProfile,
    pue: Option<f64>,
    bucket_length: Duration,
) -> Result<DeploymentSummary> {
    if telemetry.is_empty() {
        return Err(Error::EmptyInput("power series has no samples".to_string()));
    }
    let pue = pue.unwrap_or(1.0);
    let mut warnings = telemetry.warnings.clone();
    warnings.extend(grid.intensity.plausibility_warning());

    let total_energy = telemetry.total_energy();
    let per_component = if total_energy.is_zero() {
        telemetry
            .series
            .values()
            .map(|s| ComponentShare {
                component: s.component,
                energy: s.energy(),
                fraction: 0.0,
            })
            .collect()
    } else {
        component_split(telemetry)?
    };
    let mut component_power = BTreeMap::new();
    for c in telemetry.series.keys() {
        component_power.insert(*c, power_stats(telemetry, ComponentFilter::One(*c))?);
    }
    let instance = power_stats(telemetry, ComponentFilter::All)?;

    let baseline = match bucket_join(telemetry, requests, bucket_length)
        .and_then(|j| baseline_energy(&j.pairs))
    {
        Ok(b) => Some(b),
        Err(e) => {
            warnings.push(format!("no zero-request baseline: {e}"));
            None
        }
    };

    let duration = telemetry.duration();
    let total_requests: u64 = requests.iter().map(|r| r.count).sum();
    let requests_per_hour = if duration.hours() > 0.0 {
        total_requests as f64 / duration.hours()
    } else {
        0.0
    };
    let total_mass = apply_pue(emissions_from_energy(total_energy, grid.intensity)?, pue)?;
    let daily_mass = if duration.days() > 0.0 {
        total_mass.scale(1.0 / duration.days())?
    } else {
        CarbonMass::ZERO
    };
    Ok(DeploymentSummary {
        total_energy,
        per_component,
        component_power,
        mean_power: instance.mean,
        min_power: instance.min,
        max_power: instance.max,
        bucket_minutes: bucket_length.hours() * 60.0,
        baseline,
        total_requests,
        requests_per_hour,
        duration,
        grid: grid.clone(),
        pue,
        total_mass,
        daily_mass,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power_log(rows: &[(&str, &str, f64)]) -> String {
        let mut s = String::from("#form=power_w\ntimestamp,component,value\n");
        for (t, c, v) in rows {
            s.push_str(&format!("{t},{c},{v}\n"));
        }
        s
    }

    fn ingest(text: &str) -> Result<Telemetry> {
        ingest_power_csv(text.as_bytes(), "test.csv")
    }

    #[test]
    fn empty_body() {
        let t = ingest("#form=power_w\ntimestamp,component,value\n").unwrap();
        assert!(t.is_empty());
        assert_eq!(t.total_energy().kwh(), 0.0);
        assert!(matches!(component_split(&t), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn energy_form_with_declared_interval() {
        let text = "#form=energy_kwh_per_interval,interval=60s\n\
                    timestamp,component,value\n\
                    2022-01-01T00:00:00Z,gpu,0.5\n\
                    2022-01-01T00:01:00Z,gpu,0.25\n";
        let t = ingest(text).unwrap();
        let s = &t.series[&Component::Gpu];
        assert_eq!(s.interval_ms, 60_000);
        assert_eq!(t.total_energy().kwh(), 0.75);
        // 0.5 kWh in one minute is 30 kW
        assert!((s.samples[0].power_watts() - 30_000.0).abs() < 1e-9);
    }

    #[test]
    fn non_monotonic_row_reported() {
        let text = power_log(&[
            ("2022-01-01T00:00:00Z", "gpu", 1.0),
            ("2022-01-01T00:05:00Z", "gpu", 1.0),
            ("2022-01-01T00:03:00Z", "gpu", 1.0),
        ]);
        let err = ingest(&text).unwrap_err().to_string();
        assert!(err.contains("test.csv:5"), "{err}");
        assert!(err.contains("not after"), "{err}");
    }

    #[test]
    fn unknown_component_and_negative_value() {
        let err = ingest(&power_log(&[("2022-01-01T00:00:00Z", "tpu", 1.0)]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown component"), "{err}");
        let err = ingest(&power_log(&[("2022-01-01T00:00:00Z", "gpu", -1.0)]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("non-negative"), "{err}");
    }

    #[test]
    fn missing_form_is_error() {
        assert!(ingest("timestamp,component,value\n").is_err());
        assert!(ingest("#form=volts\ntimestamp,component,value\n").is_err());
    }

    #[test]
    fn gaps_are_warned() {
        let text = power_log(&[
            ("2022-01-01T00:00:00Z", "gpu", 100.0),
            ("2022-01-01T00:01:00Z", "gpu", 100.0),
            ("2022-01-01T00:02:00Z", "gpu", 100.0),
            ("2022-01-01T00:10:00Z", "gpu", 100.0),
        ]);
        let t = ingest(&text).unwrap();
        assert_eq!(t.series[&Component::Gpu].interval_ms, 60_000);
        assert_eq!(t.gap_ms, 7 * 60_000);
        assert!(t.warnings.iter().any(|w| w.contains("gaps")));
        // four one-minute samples at 100 W
        assert!((t.total_energy().kwh() - 4.0 * 100.0 / 60.0 / 1e3).abs() < 1e-15);
    }

    #[test]
    fn constant_power_stats() {
        let text = power_log(&[
            ("2022-01-01T00:00:00Z", "gpu", 250.0),
            ("2022-01-01T00:01:00Z", "gpu", 250.0),
            ("2022-01-01T00:02:00Z", "gpu", 250.0),
        ]);
        let s = power_stats(
            &ingest(&text).unwrap(),
            ComponentFilter::One(Component::Gpu),
        )
        .unwrap();
        for w in [s.mean.watts(), s.min.watts(), s.max.watts()] {
            assert!((w - 250.0).abs() < 1e-9, "{w}");
        }
    }

    #[test]
    fn two_segment_mean() {
        let text = power_log(&[
            ("2022-01-01T00:00:00Z", "gpu", 100.0),
            ("2022-01-01T00:01:00Z", "gpu", 300.0),
        ]);
        let s = power_stats(
            &ingest(&text).unwrap(),
            ComponentFilter::One(Component::Gpu),
        )
        .unwrap();
        assert!((s.mean.watts() - 200.0).abs() < 1e-9);
        assert!(power_stats(
            &ingest(&text).unwrap(),
            ComponentFilter::One(Component::Ram)
        )
        .is_err());
    }

    #[test]
    fn split_symmetry() {
        let text = power_log(&[
            ("2022-01-01T00:00:00Z", "gpu", 100.0),
            ("2022-01-01T00:00:00Z", "ram", 100.0),
            ("2022-01-01T00:01:00Z", "gpu", 100.0),
            ("2022-01-01T00:01:00Z", "ram", 100.0),
        ]);
        let split = component_split(&ingest(&text).unwrap()).unwrap();
        assert_eq!(split.len(), 2);
        assert!(split.iter().all(|s| (s.fraction - 0.5).abs() < 1e-15));
        let text = power_log(&[
            ("2022-01-01T00:00:00Z", "cpu", 10.0),
            ("2022-01-01T00:01:00Z", "cpu", 30.0),
        ]);
        let split = component_split(&ingest(&text).unwrap()).unwrap();
        assert_eq!(split[0].fraction, 1.0);
    }

    fn constant_fixture(minutes: i64, watts: f64) -> (Telemetry, Vec<RequestBucket>) {
        let mut rows = String::from("#form=power_w\ntimestamp,component,value\n");
        let t0 = parse_timestamp("2022-01-01T00:00:00Z").unwrap();
        for m in 0..minutes {
            rows.push_str(&format!(
                "{},gpu,{watts}\n",
                format_timestamp(t0 + m * 60_000)
            ));
        }
        let t = ingest(&rows).unwrap();
        let buckets = (0..minutes / 10)
            .map(|b| RequestBucket {
                start_ms: t0 + b * 600_000,
                length_ms: 600_000,
                count: (b * 7 % 13) as u64,
            })
            .collect();
        (t, buckets)
    }

    #[test]
    fn constant_power_buckets() {
        let (t, buckets) = constant_fixture(120, 1680.0);
        let j = bucket_join(&t, &buckets, Duration::from_minutes(10.0).unwrap()).unwrap();
        assert_eq!(j.pairs.len(), 12);
        for p in &j.pairs {
            assert!((p.energy.kwh() - 0.28).abs() < 1e-12, "{}", p.energy.kwh());
        }
        assert!(j.dropped.kwh().abs() < 1e-12);
    }

    #[test]
    fn partial_edges_dropped() {
        let (t, mut buckets) = constant_fixture(125, 600.0);
        buckets.push(RequestBucket {
            start_ms: buckets.last().unwrap().end_ms(),
            length_ms: 600_000,
            count: 3,
        });
        let j = bucket_join(&t, &buckets, Duration::from_minutes(10.0).unwrap()).unwrap();
        // the 13th bucket is only half covered by power data
        assert_eq!(j.pairs.len(), 12);
        let kept: f64 = j.pairs.iter().map(|p| p.energy.kwh()).sum();
        assert!((kept + j.dropped.kwh() - t.total_energy().kwh()).abs() < 1e-12);
        assert!((j.dropped.kwh() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn disjoint_ranges() {
        let (t, _) = constant_fixture(60, 100.0);
        let far = vec![RequestBucket {
            start_ms: parse_timestamp("2023-01-01T00:00:00Z").unwrap(),
            length_ms: 600_000,
            count: 1,
        }];
        assert!(matches!(
            bucket_join(&t, &far, Duration::from_minutes(10.0).unwrap()),
            Err(Error::NoOverlap)
        ));
        assert!(matches!(
            bucket_join(&t, &[], Duration::from_minutes(10.0).unwrap()),
            Err(Error::NoOverlap)
        ));
    }

    #[test]
    fn straddling_request_bucket() {
        let (t, _) = constant_fixture(60, 100.0);
        let t0 = parse_timestamp("2022-01-01T00:05:00Z").unwrap();
        let b = vec![RequestBucket {
            start_ms: t0,
            length_ms: 600_000,
            count: 1,
        }];
        assert!(bucket_join(&t, &b, Duration::from_minutes(10.0).unwrap()).is_err());
    }

    fn pairs(values: &[(u64, f64)]) -> Vec<BucketPair> {
        values
            .iter()
            .enumerate()
            .map(|(i, &(requests, kwh))| BucketPair {
                start_ms: i as i64 * 600_000,
                requests,
                energy: Energy::from_kwh(kwh).unwrap(),
            })
            .collect()
    }

    #[test]
    fn baseline_all_zero_requests() {
        let b = baseline_energy(&pairs(&[(0, 0.3); 12])).unwrap();
        assert!((b.energy.kwh() - 0.3).abs() < 1e-15);
        assert!(matches!(
            b.method,
            BaselineMethod::ZeroRequestMean { buckets: 12 }
        ));
    }

    #[test]
    fn baseline_regression_exact_line() {
        let v: Vec<(u64, f64)> = (1..=20).map(|c| (c, 0.28 + 0.001 * c as f64)).collect();
        let b = baseline_energy(&pairs(&v)).unwrap();
        assert!((b.energy.kwh() - 0.28).abs() < 1e-12);
        match b.method {
            BaselineMethod::Regression {
                slope_kwh_per_request,
                ..
            } => assert!((slope_kwh_per_request - 0.001).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn baseline_clamped_and_insufficient() {
        let v: Vec<(u64, f64)> = (1..=20).map(|c| (c, 0.01 * c as f64)).collect();
        let v: Vec<(u64, f64)> = v
            .into_iter()
            .map(|(c, e)| (c, (e - 0.05).max(0.0)))
            .collect();
        let b = baseline_energy(&pairs(&v)).unwrap();
        assert!(b.energy.kwh() >= 0.0);
        assert!(matches!(
            baseline_energy(&pairs(&[(0, 1.0); 9])),
            Err(Error::InsufficientData { got: 9, .. })
        ));
        assert!(matches!(
            baseline_energy(&pairs(&[(4, 1.0); 12])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn zero_energy_summary() {
        let (t, buckets) = constant_fixture(120, 0.0);
        let grid = crate::profiles::builtin_profiles()
            .grid("us-central1")
            .unwrap()
            .clone();
        let s = deployment_summary(
            &t,
            &buckets,
            &grid,
            None,
            Duration::from_minutes(10.0).unwrap(),
        )
        .unwrap();
        assert_eq!(s.total_mass.kg(), 0.0);
        assert_eq!(s.daily_mass.kg(), 0.0);
    }
}

//! Seeded generators for synthetic inference telemetry.
//!
//! The fixture generator produces a power log and request log whose
//! aggregates (total and per-component energy, request count, zero-load
//! draw) are fixed by [`InferenceFixtureSpec`]; the random parts only shape
//! the time series in between.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::telemetry::{format_timestamp, BucketPair, Component};
use crate::units::Energy;

const MS_PER_HOUR: f64 = 3_600_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentTarget {
    pub component: Component,
    /// Energy over the whole window, kWh.
    pub energy_kwh: f64,
    /// Draw with no requests in flight, W.
    pub idle_watts: f64,
    /// Half-width of uniform noise added to each sample, W.
    pub noise_watts: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceFixtureSpec {
    pub seed: u64,
    pub start_ms: i64,
    pub hours: f64,
    pub sample_seconds: i64,
    pub bucket_seconds: i64,
    pub total_requests: u64,
    /// Amplitude of the daily request cycle; above 1 the trough is clipped
    /// to zero traffic.
    pub diurnal_amplitude: f64,
    pub components: Vec<ComponentTarget>,
}

impl Default for InferenceFixtureSpec {
    /// A 17.25-day deployment drawing 914 kWh in total.
    fn default() -> Self {
        // component energies rescaled so they sum to exactly 914 kWh
        let scale = 914.0 / (688.38 + 18.5 + 207.2);
        Self {
            seed: 176_000_000,
            start_ms: 1_658_707_200_000, // 2022-07-25T00:00:00Z
            hours: 414.0,
            sample_seconds: 300,
            bucket_seconds: 600,
            total_requests: 230_768,
            diurnal_amplitude: 1.3,
            components: vec![
                ComponentTarget {
                    component: Component::Gpu,
                    energy_kwh: 688.38 * scale,
                    idle_watts: 1260.0,
                    noise_watts: 6.0,
                },
                ComponentTarget {
                    component: Component::Cpu,
                    energy_kwh: 18.5 * scale,
                    idle_watts: 40.0,
                    noise_watts: 0.0,
                },
                ComponentTarget {
                    component: Component::Ram,
                    energy_kwh: 207.2 * scale,
                    idle_watts: 380.0,
                    noise_watts: 0.0,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceFixture {
    /// `#form=power_w` log, one row per component per sample.
    pub power_csv: String,
    pub requests_csv: String,
    pub bucket_counts: Vec<u64>,
    /// Per-request power slope of each component, W per request per sample.
    pub slopes: Vec<(Component, f64)>,
}

fn request_counts(spec: &InferenceFixtureSpec, buckets: usize, rng: &mut StdRng) -> Vec<u64> {
    let bucket_hours = spec.bucket_seconds as f64 / 3600.0;
    let weights: Vec<f64> = (0..buckets)
        .map(|i| {
            let phase = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) * bucket_hours / 24.0;
            (1.0 + spec.diurnal_amplitude * phase.sin()).max(0.0)
        })
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let mut counts: Vec<u64> = weights
        .iter()
        .map(|w| {
            let lambda = spec.total_requests as f64 * w / weight_sum;
            if lambda > 0.0 {
                Poisson::new(lambda).expect("positive rate").sample(rng) as u64
            } else {
                0
            }
        })
        .collect();
    // nudge single requests in or out of active buckets until the total matches
    let active: Vec<usize> = (0..buckets).filter(|&i| weights[i] > 0.0).collect();
    let mut total: u64 = counts.iter().sum();
    while total != spec.total_requests && !active.is_empty() {
        let i = active[rng.gen_range(0..active.len())];
        if total < spec.total_requests {
            counts[i] += 1;
            total += 1;
        } else if counts[i] > 0 {
            counts[i] -= 1;
            total -= 1;
        }
    }
    counts
}

pub fn inference_fixture(spec: &InferenceFixtureSpec) -> Result<InferenceFixture> {
    let sample_ms = spec.sample_seconds * 1000;
    let bucket_ms = spec.bucket_seconds * 1000;
    let window_ms = (spec.hours * MS_PER_HOUR).round() as i64;
    if sample_ms <= 0 || bucket_ms % sample_ms != 0 || window_ms % bucket_ms != 0 {
        return Err(Error::Invariant(
            "window must be whole buckets and buckets whole samples".to_string(),
        ));
    }
    if spec.start_ms.rem_euclid(bucket_ms) != 0 {
        return Err(Error::Invariant(
            "start must sit on a bucket boundary".to_string(),
        ));
    }
    let buckets = (window_ms / bucket_ms) as usize;
    let per_bucket = (bucket_ms / sample_ms) as usize;
    let samples = buckets * per_bucket;
    let sample_hours = sample_ms as f64 / MS_PER_HOUR;

    let mut rng = StdRng::seed_from_u64(spec.seed);
    let counts = request_counts(spec, buckets, &mut rng);
    let load: Vec<f64> = (0..samples)
        .map(|s| counts[s / per_bucket] as f64 / per_bucket as f64)
        .collect();
    let load_sum: f64 = load.iter().sum();

    let mut columns = Vec::with_capacity(spec.components.len());
    let mut slopes = Vec::new();
    for target in &spec.components {
        let noise: Vec<f64> = (0..samples)
            .map(|_| {
                if target.noise_watts > 0.0 {
                    rng.gen_range(-target.noise_watts..=target.noise_watts)
                } else {
                    0.0
                }
            })
            .collect();
        let fixed_wh: f64 = noise
            .iter()
            .map(|n| (target.idle_watts + n) * sample_hours)
            .sum();
        let slope = if load_sum > 0.0 {
            (target.energy_kwh * 1e3 - fixed_wh) / (load_sum * sample_hours)
        } else {
            0.0
        };
        if slope < 0.0 {
            return Err(Error::Invariant(format!(
                "{}: idle draw alone exceeds the energy target",
                target.component
            )));
        }
        let mut watts: Vec<String> = Vec::with_capacity(samples);
        let mut printed_wh = 0.0;
        for s in 0..samples {
            let w = target.idle_watts + noise[s] + slope * load[s];
            let text = format!("{w:.6}");
            if s + 1 < samples {
                printed_wh += text.parse::<f64>().expect("formatted float") * sample_hours;
            }
            watts.push(text);
        }
        // last sample absorbs rounding so the total is exact
        let last = (target.energy_kwh * 1e3 - printed_wh) / sample_hours;
        watts[samples - 1] = format!("{last:.6}");
        slopes.push((target.component, slope));
        columns.push((target.component, watts));
    }

    let mut power_csv = format!(
        "#form=power_w,interval={}s\ntimestamp,component,value\n",
        spec.sample_seconds
    );
    for s in 0..samples {
        let ts = format_timestamp(spec.start_ms + s as i64 * sample_ms);
        for (component, watts) in &columns {
            power_csv.push_str(&format!("{ts},{component},{}\n", watts[s]));
        }
    }
    let mut requests_csv = String::from("bucket_start,bucket_seconds,count\n");
    for (b, c) in counts.iter().enumerate() {
        requests_csv.push_str(&format!(
            "{},{},{c}\n",
            format_timestamp(spec.start_ms + b as i64 * bucket_ms),
            spec.bucket_seconds
        ));
    }
    Ok(InferenceFixture {
        power_csv,
        requests_csv,
        bucket_counts: counts,
        slopes,
    })
}

/// Bucket pairs with `energy = baseline + slope * count + N(0, sigma)`,
/// clamped at zero. Request counts are Poisson with mean `mean_requests`.
pub fn linear_bucket_pairs(
    seed: u64,
    buckets: usize,
    baseline_kwh: f64,
    slope_kwh: f64,
    sigma_kwh: f64,
    mean_requests: f64,
) -> Result<Vec<BucketPair>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let noise =
        Normal::new(0.0, sigma_kwh).map_err(|e| Error::Domain(format!("noise sigma: {e}")))?;
    let requests =
        Poisson::new(mean_requests).map_err(|e| Error::Domain(format!("request rate: {e}")))?;
    (0..buckets)
        .map(|i| {
            let count = requests.sample(&mut rng) as u64;
            let e = baseline_kwh + slope_kwh * count as f64 + noise.sample(&mut rng);
            Ok(BucketPair {
                start_ms: i as i64 * 600_000,
                requests: count,
                energy: Energy::from_kwh(e.max(0.0))?,
            })
        })
        .collect()
}

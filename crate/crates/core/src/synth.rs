//! Synthetic weather-coupled city.
//!
//! Parcels get a periodic demand profile with Poisson noise. Rain events are
//! storms with a random center and footprint; while it rains each parcel's
//! demand is scaled by `max(0.1, 1 - k_i·r)` with a per-parcel sensitivity
//! `k_i`, so weather has a heterogeneous causal effect on flow. `r` is an
//! exponentially smoothed precipitation: demand reacts to rain with a delay
//! and recovers gradually after it stops.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::datamodel::{flow_schema, haversine_m, weather_schema, HourStamp, RegionGraph, STTensor};
use crate::error::{Error, Result};

/// Minimum multiplicative demand factor during rain.
pub const SUPPRESSION_FLOOR: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_parcels: usize,
    pub n_days: usize,
    /// Expected storms per day.
    pub rain_event_rate: f64,
    /// Peak storm intensity range, in/hr.
    pub rain_intensity_range: (f64, f64),
    /// Range of per-parcel rain sensitivity `k_i`, per in/hr.
    pub suppression_strength: (f64, f64),
    /// Smoothing factor in `[0, 1)` of the rain felt by demand; 0 means
    /// demand reacts to the current hour only.
    pub rain_memory: f64,
    pub seed: u64,
    /// Mean demand range, trips/hr.
    pub base_rate_range: (f64, f64),
    /// Storm duration range in hours.
    pub event_hours: (usize, usize),
    pub start: HourStamp,
    pub center: (f64, f64),
    pub extent_km: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_parcels: 20,
            n_days: 60,
            rain_event_rate: 0.25,
            rain_intensity_range: (0.15, 0.6),
            suppression_strength: (1.0, 4.0),
            rain_memory: 0.9,
            seed: 7,
            base_rate_range: (8.0, 40.0),
            event_hours: (8, 30),
            // 2017-03-06T00:00Z, a Monday
            start: HourStamp(1_488_758_400 / 3600),
            center: (40.75, -73.98),
            extent_km: 10.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("synthetic config: {what}")));
        if self.n_parcels < 2 {
            return bad("n_parcels must be at least 2");
        }
        if self.n_days == 0 {
            return bad("n_days must be positive");
        }
        if !(self.rain_event_rate >= 0.0 && self.rain_event_rate.is_finite()) {
            return bad("rain_event_rate must be non-negative");
        }
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi;
        if !range_ok(self.rain_intensity_range) || !range_ok(self.suppression_strength) || !range_ok(self.base_rate_range) {
            return bad("ranges must be finite, non-negative and ordered");
        }
        if self.base_rate_range.0 <= 0.0 {
            return bad("base rates must be positive");
        }
        if self.event_hours.0 == 0 || self.event_hours.0 > self.event_hours.1 {
            return bad("event_hours must be a positive ordered range");
        }
        if !(0.0..1.0).contains(&self.rain_memory) {
            return bad("rain_memory must lie in [0, 1)");
        }
        if !(self.extent_km > 0.0) {
            return bad("extent_km must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCity {
    pub graph: RegionGraph,
    pub flow: STTensor,
    pub weather: STTensor,
    /// Per-parcel rain sensitivity used by the generator.
    pub sensitivity: Vec<f64>,
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

struct Profile {
    base: f64,
    amp1: f64,
    phase1: f64,
    amp2: f64,
    phase2: f64,
    weekend: f64,
}

impl Profile {
    fn sample<R: Rng>(rng: &mut R, base: f64) -> Self {
        Self {
            base,
            amp1: rng.random_range(0.3..0.6),
            phase1: rng.random_range(0.0..24.0),
            amp2: rng.random_range(0.1..0.3),
            phase2: rng.random_range(0.0..12.0),
            weekend: rng.random_range(0.6..1.1),
        }
    }

    fn rate(&self, h: HourStamp) -> f64 {
        let hod = h.hour_of_day() as f64;
        let daily = 1.0
            + self.amp1 * libm::sin(2.0 * PI * (hod - self.phase1) / 24.0)
            + self.amp2 * libm::sin(4.0 * PI * (hod - self.phase2) / 24.0);
        let weekly = if h.is_weekend() { self.weekend } else { 1.0 };
        self.base * daily * weekly
    }
}

struct Storm {
    start: usize,
    hours: usize,
    peak: f64,
    center: (f64, f64),
    radius_m: f64,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCity> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_parcels;
    let total = cfg.n_days * 24;

    let km_lat = 1.0 / 111.32;
    let km_lon = km_lat / libm::cos(cfg.center.0.to_radians());
    let half = cfg.extent_km / 2.0;
    let place = |rng: &mut ChaCha8Rng| {
        (
            cfg.center.0 + rng.random_range(-half..half) * km_lat,
            cfg.center.1 + rng.random_range(-half..half) * km_lon,
        )
    };
    let centroids: Vec<_> = (0..n).map(|_| place(&mut rng)).collect();
    let ids = (0..n).map(|i| format!("P{i:03}")).collect();
    let graph = RegionGraph::new(ids, centroids.clone())?;

    let mut pickups = Vec::with_capacity(n);
    let mut dropoffs = Vec::with_capacity(n);
    let mut sensitivity = Vec::with_capacity(n);
    for _ in 0..n {
        let base = uniform(&mut rng, cfg.base_rate_range);
        pickups.push(Profile::sample(&mut rng, base));
        let drop_base = base * rng.random_range(0.8..1.2);
        dropoffs.push(Profile::sample(&mut rng, drop_base));
        sensitivity.push(uniform(&mut rng, cfg.suppression_strength));
    }

    let mut storms = Vec::new();
    if cfg.rain_event_rate > 0.0 {
        let expected = cfg.rain_event_rate * cfg.n_days as f64;
        let count = Poisson::new(expected).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as usize;
        for _ in 0..count {
            storms.push(Storm {
                start: rng.random_range(0..total),
                hours: rng.random_range(cfg.event_hours.0..=cfg.event_hours.1),
                peak: uniform(&mut rng, cfg.rain_intensity_range),
                center: place(&mut rng),
                radius_m: rng.random_range(0.6..1.2) * cfg.extent_km * 1000.0,
            });
        }
    }

    let mut precip = vec![0.0; total * n];
    for s in &storms {
        let footprint: Vec<f64> = centroids
            .iter()
            .map(|&c| {
                let d = haversine_m(c, s.center);
                libm::exp(-d * d / (2.0 * s.radius_m * s.radius_m))
            })
            .collect();
        for t in s.start..(s.start + s.hours).min(total) {
            let gust = rng.random_range(0.8..1.2);
            for i in 0..n {
                precip[t * n + i] += s.peak * gust * footprint[i];
            }
        }
    }

    let mut felt = vec![0.0; n];
    let mut flow = vec![0.0; total * n * 2];
    let mut weather = vec![0.0; total * n * 3];
    for t in 0..total {
        let h = cfg.start.offset(t as i64);
        let hod = h.hour_of_day() as f64;
        let temp_base = 55.0 + 12.0 * libm::sin(2.0 * PI * (hod - 9.0) / 24.0);
        for i in 0..n {
            let p = precip[t * n + i];
            felt[i] = cfg.rain_memory * felt[i] + (1.0 - cfg.rain_memory) * p;
            let factor = (1.0 - sensitivity[i] * felt[i]).max(SUPPRESSION_FLOOR);
            for (f, profile) in [&pickups[i], &dropoffs[i]].into_iter().enumerate() {
                let lambda = profile.rate(h) * factor;
                let count = Poisson::new(lambda).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng);
                flow[(t * n + i) * 2 + f] = count;
            }
            let w = &mut weather[(t * n + i) * 3..(t * n + i) * 3 + 3];
            // stored at single precision so a file round trip is lossless
            w[0] = p as f32 as f64;
            w[1] = (temp_base - 8.0 * p.min(0.5) + rng.random_range(-1.0..1.0)) as f32 as f64;
            w[2] = (5.0 + 3.0 * rng.random_range(0.0..1.0) + 12.0 * p) as f32 as f64;
        }
    }

    let stamps: Vec<_> = (0..total as i64).map(|k| cfg.start.offset(k)).collect();
    Ok(SyntheticCity {
        graph,
        flow: STTensor::new(flow, n, flow_schema(), stamps.clone())?,
        weather: STTensor::new(weather, n, weather_schema(), stamps)?,
        sensitivity,
    })
}

//! Raw records to aligned parcel-hour tensors, and tensors to sample windows.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::datamodel::{
    flow_schema, haversine_m, label_condition, weather_schema, HourStamp, RegionGraph, STTensor, SampleWindow,
};
use crate::error::{Error, Result};

/// Stations closer than this to a centroid donate their value unchanged.
pub const COINCIDENT_STATION_M: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TripRecord {
    /// Unix seconds.
    pub pickup_ts: i64,
    pub dropoff_ts: i64,
    pub pickup_parcel: String,
    pub dropoff_parcel: String,
}

/// Hour span `[start, start + hours)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HourSpan {
    pub start: HourStamp,
    pub hours: usize,
}

impl HourSpan {
    pub fn index(&self, h: HourStamp) -> Option<usize> {
        let off = h.0 - self.start.0;
        (off >= 0 && (off as usize) < self.hours).then_some(off as usize)
    }

    pub fn stamps(&self) -> Vec<HourStamp> {
        (0..self.hours as i64).map(|k| self.start.offset(k)).collect()
    }
}

/// Bins pickups and dropoffs per parcel and hour. Without an explicit span
/// the tensor covers the first to the last hour touched by any record.
pub fn aggregate_trips(records: &[TripRecord], graph: &RegionGraph, span: Option<HourSpan>) -> Result<STTensor> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut unknown = BTreeSet::new();
    let mut resolved = Vec::with_capacity(records.len());
    for (k, r) in records.iter().enumerate() {
        if r.pickup_ts > r.dropoff_ts {
            return Err(Error::Validation { index: format!("record {k}"), reason: "pickup after dropoff".into() });
        }
        let p = graph.index_of(&r.pickup_parcel);
        let d = graph.index_of(&r.dropoff_parcel);
        if p.is_none() {
            unknown.insert(r.pickup_parcel.clone());
        }
        if d.is_none() {
            unknown.insert(r.dropoff_parcel.clone());
        }
        if let (Some(p), Some(d)) = (p, d) {
            resolved.push((HourStamp::from_unix_seconds(r.pickup_ts), p, HourStamp::from_unix_seconds(r.dropoff_ts), d));
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownParcels(unknown.into_iter().collect()));
    }
    let span = span.unwrap_or_else(|| {
        let lo = resolved.iter().map(|r| r.0).min().unwrap();
        let hi = resolved.iter().map(|r| r.2).max().unwrap();
        HourSpan { start: lo, hours: (hi.0 - lo.0 + 1) as usize }
    });
    let n = graph.n();
    let mut values = vec![0.0; span.hours * n * 2];
    for (k, &(ph, p, dh, d)) in resolved.iter().enumerate() {
        let (Some(pt), Some(dt)) = (span.index(ph), span.index(dh)) else {
            return Err(Error::Validation { index: format!("record {k}"), reason: "outside the declared time span".into() });
        };
        values[(pt * n + p) * 2] += 1.0;
        values[(dt * n + d) * 2 + 1] += 1.0;
    }
    STTensor::new(values, n, flow_schema(), span.stamps())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationReading {
    pub station_id: String,
    pub location: (f64, f64),
    pub hour: HourStamp,
    pub precip: Option<f64>,
    pub temp: Option<f64>,
    pub wind: Option<f64>,
}

impl StationReading {
    fn attribute(&self, k: usize) -> Option<f64> {
        [self.precip, self.temp, self.wind][k].filter(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdwOptions {
    pub power: f64,
    /// Carry the previous hour forward instead of failing on a gap.
    pub forward_fill: bool,
}

impl Default for IdwOptions {
    fn default() -> Self {
        Self { power: 2.0, forward_fill: false }
    }
}

/// Inverse-distance weighted value at `target` from `(location, value)` sources.
pub fn idw_point(target: (f64, f64), sources: &[((f64, f64), f64)], power: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(loc, v) in sources {
        let d = haversine_m(target, loc);
        if d < COINCIDENT_STATION_M {
            return v;
        }
        let w = libm::pow(d, -power);
        num += w * v;
        den += w;
    }
    num / den
}

/// Interpolates station readings onto parcel centroids for every hour of the
/// span (or of the readings when no span is given). Output features are
/// precip, temp and wind.
pub fn idw_interpolate(
    readings: &[StationReading],
    graph: &RegionGraph,
    span: Option<HourSpan>,
    opts: IdwOptions,
) -> Result<STTensor> {
    if !(opts.power > 0.0 && opts.power.is_finite()) {
        return Err(Error::Config(format!("IDW power must be positive, got {}", opts.power)));
    }
    if readings.is_empty() {
        return Err(Error::Config("no station readings".into()));
    }
    for (k, r) in readings.iter().enumerate() {
        if let Some(p) = r.precip {
            if !(p >= 0.0) {
                return Err(Error::Validation { index: format!("reading {k} ({})", r.station_id), reason: format!("negative precipitation {p}") });
            }
        }
    }
    let span = span.unwrap_or_else(|| {
        let lo = readings.iter().map(|r| r.hour).min().unwrap();
        let hi = readings.iter().map(|r| r.hour).max().unwrap();
        HourSpan { start: lo, hours: (hi.0 - lo.0 + 1) as usize }
    });
    let mut by_hour: Vec<Vec<&StationReading>> = vec![Vec::new(); span.hours];
    for r in readings {
        if let Some(t) = span.index(r.hour) {
            by_hour[t].push(r);
        }
    }
    let schema = weather_schema();
    let (n, d) = (graph.n(), schema.len());
    let mut values = vec![0.0; span.hours * n * d];
    for t in 0..span.hours {
        for k in 0..d {
            let sources: Vec<_> =
                by_hour[t].iter().filter_map(|r| r.attribute(k).map(|v| (r.location, v))).collect();
            if sources.is_empty() {
                if !opts.forward_fill || t == 0 {
                    return Err(Error::Gap { attribute: schema[k].name.clone(), hour: span.start.0 + t as i64 });
                }
                for i in 0..n {
                    values[(t * n + i) * d + k] = values[((t - 1) * n + i) * d + k];
                }
                continue;
            }
            for (i, &c) in graph.centroids().iter().enumerate() {
                values[(t * n + i) * d + k] = idw_point(c, &sources, opts.power);
            }
        }
    }
    STTensor::new(values, n, schema, span.stamps())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub history: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { history: 12, horizon: 12, stride: 1 }
    }
}

impl WindowSpec {
    /// Number of windows a series of `total` steps yields.
    pub fn count(&self, total: usize) -> usize {
        if total < self.history + self.horizon || self.stride == 0 {
            0
        } else {
            (total - self.history - self.horizon) / self.stride + 1
        }
    }
}

/// Cuts aligned flow and weather tensors into history/future windows.
/// Window ids are the start offsets in the series.
pub fn make_windows(flow: &STTensor, weather: &STTensor, spec: WindowSpec) -> Result<Vec<SampleWindow>> {
    if flow.time_index() != weather.time_index() || flow.n() != weather.n() {
        return Err(Error::TimeIndexMismatch);
    }
    if spec.history == 0 || spec.horizon == 0 || spec.stride == 0 {
        return Err(Error::Config("history, horizon and stride must be positive".into()));
    }
    let total = flow.t();
    if total < spec.history + spec.horizon {
        return Err(Error::SeriesTooShort { total, history: spec.history, horizon: spec.horizon });
    }
    let precip_feature = weather
        .feature_index("precip")
        .ok_or_else(|| Error::Config("weather tensor has no precip feature".into()))?;
    let n = flow.n();
    let mut out = Vec::with_capacity(spec.count(total));
    let mut start = 0;
    while start + spec.history + spec.horizon <= total {
        let stamps = &flow.time_index()[start..start + spec.history];
        let weather_hist = weather.slice_steps(start, spec.history).to_vec();
        let precip: Vec<f64> = weather_hist.iter().skip(precip_feature).step_by(weather.d()).copied().collect();
        out.push(SampleWindow {
            id: start as u64,
            n_parcels: n,
            d_flow: flow.d(),
            d_weather: weather.d(),
            flow_hist: flow.slice_steps(start, spec.history).to_vec(),
            weather_hist,
            flow_future: flow.slice_steps(start + spec.history, spec.horizon).to_vec(),
            start_time: stamps[0],
            time_of_day: stamps.iter().map(|h| h.hour_of_day()).collect(),
            day_of_week: stamps.iter().map(|h| h.day_of_week()).collect(),
            precip_feature,
            condition: label_condition(&precip, n)?,
        });
        start += spec.stride;
    }
    Ok(out)
}

//! Region graph, spatio-temporal tensors, sample windows, condition labels
//! and the chronological split.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Parcels closer than this are joined by an edge.
pub const ADJACENCY_THRESHOLD_M: f64 = 2_000.0;
/// Mean history precipitation (in/hr) above which a window is extreme.
pub const EXTREME_PRECIP_THRESHOLD: f64 = 0.1;
const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Whole hours since 1970-01-01T00:00Z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HourStamp(pub i64);

impl HourStamp {
    /// Hour bin containing a unix timestamp, bins are `[h, h+1)`.
    pub fn from_unix_seconds(secs: i64) -> Self {
        HourStamp(secs.div_euclid(3600))
    }

    pub fn unix_seconds(self) -> i64 {
        self.0 * 3600
    }

    pub fn hour_of_day(self) -> u8 {
        self.0.rem_euclid(24) as u8
    }

    /// Monday = 0 ... Sunday = 6.
    pub fn day_of_week(self) -> u8 {
        // 1970-01-01 was a Thursday
        (self.0.div_euclid(24) + 3).rem_euclid(7) as u8
    }

    pub fn is_weekend(self) -> bool {
        self.day_of_week() >= 5
    }

    pub fn offset(self, hours: i64) -> Self {
        HourStamp(self.0 + hours)
    }
}

/// Great-circle distance in meters between two `(lat, lon)` points in degrees.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let s1 = libm::sin((lat2 - lat1) / 2.0);
    let s2 = libm::sin((lon2 - lon1) / 2.0);
    let h = s1 * s1 + libm::cos(lat1) * libm::cos(lat2) * s2 * s2;
    2.0 * EARTH_RADIUS_M * libm::asin(libm::sqrt(h.min(1.0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionGraph {
    parcel_ids: Vec<String>,
    centroids: Vec<(f64, f64)>,
    distances: Vec<f64>,
    edges: Vec<(usize, usize)>,
}

impl RegionGraph {
    /// Builds a graph with haversine distances between centroids.
    pub fn new(parcel_ids: Vec<String>, centroids: Vec<(f64, f64)>) -> Result<Self> {
        let n = centroids.len();
        let mut distances = alloc::vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = haversine_m(centroids[i], centroids[j]);
                distances[i * n + j] = d;
                distances[j * n + i] = d;
            }
        }
        Self::with_distances(parcel_ids, centroids, distances)
    }

    /// Builds a graph from an explicit row-major `N×N` distance matrix.
    pub fn with_distances(
        parcel_ids: Vec<String>,
        centroids: Vec<(f64, f64)>,
        distances: Vec<f64>,
    ) -> Result<Self> {
        let n = parcel_ids.len();
        if n < 2 {
            return Err(Error::Config(format!("a region graph needs at least 2 parcels, got {n}")));
        }
        if centroids.len() != n {
            return Err(Error::Shape(format!("{} centroids for {n} parcels", centroids.len())));
        }
        if distances.len() != n * n {
            return Err(Error::Shape(format!("distance matrix has {} entries, expected {}", distances.len(), n * n)));
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for id in &parcel_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation { index: id.clone(), reason: "duplicate parcel id".into() });
            }
        }
        for (i, &(lat, lon)) in centroids.iter().enumerate() {
            if !(lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat)) {
                return Err(Error::Validation { index: format!("parcel {i}"), reason: "invalid centroid".into() });
            }
        }
        let mut edges = Vec::new();
        for i in 0..n {
            if distances[i * n + i] != 0.0 {
                return Err(Error::Validation { index: format!("({i}, {i})"), reason: "self distance must be 0".into() });
            }
            for j in i + 1..n {
                let (a, b) = (distances[i * n + j], distances[j * n + i]);
                if !(a.is_finite() && a >= 0.0) || a != b {
                    return Err(Error::Validation {
                        index: format!("({i}, {j})"),
                        reason: "distances must be finite, non-negative and symmetric".into(),
                    });
                }
                if a <= ADJACENCY_THRESHOLD_M {
                    edges.push((i, j));
                }
            }
        }
        Ok(Self { parcel_ids, centroids, distances, edges })
    }

    pub fn n(&self) -> usize {
        self.parcel_ids.len()
    }

    pub fn parcel_ids(&self) -> &[String] {
        &self.parcel_ids
    }

    pub fn centroids(&self) -> &[(f64, f64)] {
        &self.centroids
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.n() + j]
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.parcel_ids.iter().position(|p| p == id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Feature {
    pub name: String,
    pub unit: String,
}

impl Feature {
    pub fn new(name: &str, unit: &str) -> Self {
        Self { name: name.to_string(), unit: unit.to_string() }
    }
}

pub fn flow_schema() -> Vec<Feature> {
    alloc::vec![Feature::new("pickup_count", "trips/hr"), Feature::new("dropoff_count", "trips/hr")]
}

pub fn weather_schema() -> Vec<Feature> {
    alloc::vec![Feature::new("precip", "in/hr"), Feature::new("temp", "F"), Feature::new("wind", "mph")]
}

/// Dense `T×N×d` series with an hourly time index.
#[derive(Clone, Debug, PartialEq)]
pub struct STTensor {
    values: Vec<f64>,
    n_parcels: usize,
    schema: Vec<Feature>,
    time_index: Vec<HourStamp>,
}

impl STTensor {
    pub fn new(values: Vec<f64>, n_parcels: usize, schema: Vec<Feature>, time_index: Vec<HourStamp>) -> Result<Self> {
        let expected = time_index.len() * n_parcels * schema.len();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{} values for {}x{}x{}",
                values.len(),
                time_index.len(),
                n_parcels,
                schema.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let d = schema.len();
            return Err(Error::Validation {
                index: format!("({}, {}, {})", pos / (n_parcels * d), (pos / d) % n_parcels, pos % d),
                reason: "non-finite value".into(),
            });
        }
        Ok(Self { values, n_parcels, schema, time_index })
    }

    pub fn t(&self) -> usize {
        self.time_index.len()
    }

    pub fn n(&self) -> usize {
        self.n_parcels
    }

    pub fn d(&self) -> usize {
        self.schema.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn schema(&self) -> &[Feature] {
        &self.schema
    }

    pub fn time_index(&self) -> &[HourStamp] {
        &self.time_index
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize, f: usize) -> f64 {
        self.values[(t * self.n_parcels + i) * self.schema.len() + f]
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|f| f.name == name)
    }

    /// Values of steps `[start, start + len)` in the same row-major layout.
    pub fn slice_steps(&self, start: usize, len: usize) -> &[f64] {
        let stride = self.n_parcels * self.schema.len();
        &self.values[start * stride..(start + len) * stride]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Normal,
    Extreme,
}

impl Condition {
    /// Class index used by the discriminator.
    pub fn class(self) -> usize {
        match self {
            Condition::Normal => 0,
            Condition::Extreme => 1,
        }
    }

    pub fn from_class(class: usize) -> Result<Self> {
        match class {
            0 => Ok(Condition::Normal),
            1 => Ok(Condition::Extreme),
            other => Err(Error::Validation { index: format!("class {other}"), reason: "not a condition label".into() }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Normal => "normal",
            Condition::Extreme => "extreme",
        }
    }
}

/// `a + b` split into the rounded sum and its exact rounding error.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[derive(Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.sum, x);
        self.sum = s;
        self.comp += e;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionLabel {
    pub value: Condition,
    pub mean_precip: f64,
}

/// Labels a window from its `T×N` precipitation slice (row-major, `t·n + i`).
/// Extreme iff the mean is strictly greater than 0.1 in/hr. The comparison
/// uses the compensated sum of `p - 0.1` so that a slice whose mean is the
/// threshold itself is never pushed over it by rounding.
pub fn label_condition(precip: &[f64], n_parcels: usize) -> Result<ConditionLabel> {
    if precip.is_empty() || n_parcels == 0 {
        return Err(Error::Shape("empty precipitation slice".into()));
    }
    let mut sum = 0.0;
    let mut excess = Neumaier::default();
    for (k, &p) in precip.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::Validation {
                index: format!("(t={}, parcel={})", k / n_parcels, k % n_parcels),
                reason: format!("precipitation must be finite and non-negative, got {p}"),
            });
        }
        sum += p;
        let (d, e) = two_sum(p, -EXTREME_PRECIP_THRESHOLD);
        excess.add(d);
        excess.add(e);
    }
    let mean_precip = sum / precip.len() as f64;
    let value = if excess.total() > 0.0 { Condition::Extreme } else { Condition::Normal };
    Ok(ConditionLabel { value, mean_precip })
}

/// One example: history of flow and weather plus the future flow target.
/// Arrays are row-major `step × parcel × feature`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    pub id: u64,
    pub n_parcels: usize,
    pub d_flow: usize,
    pub d_weather: usize,
    pub flow_hist: Vec<f64>,
    pub weather_hist: Vec<f64>,
    pub flow_future: Vec<f64>,
    pub start_time: HourStamp,
    pub time_of_day: Vec<u8>,
    pub day_of_week: Vec<u8>,
    pub precip_feature: usize,
    pub condition: ConditionLabel,
}

impl SampleWindow {
    pub fn history_len(&self) -> usize {
        self.time_of_day.len()
    }

    pub fn horizon(&self) -> usize {
        self.flow_future.len() / (self.n_parcels * self.d_flow)
    }

    /// `T×N` precipitation slice of the history.
    pub fn precip_hist(&self) -> Vec<f64> {
        self.weather_hist.iter().skip(self.precip_feature).step_by(self.d_weather).copied().collect()
    }

    /// Recomputes the condition label from the current weather history.
    pub fn relabel(&mut self) -> Result<()> {
        self.condition = label_condition(&self.precip_hist(), self.n_parcels)?;
        Ok(())
    }

    pub fn is_extreme(&self) -> bool {
        self.condition.value == Condition::Extreme
    }

    /// Day type of the window start, `"weekend"` or `"weekday"`.
    pub fn day_type(&self) -> &'static str {
        if self.start_time.is_weekend() {
            "weekend"
        } else {
            "weekday"
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<SampleWindow>,
    pub valid: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

impl Split {
    /// Test windows partitioned into `(normal, extreme)`.
    pub fn test_by_condition(&self) -> (Vec<&SampleWindow>, Vec<&SampleWindow>) {
        self.test.iter().partition(|w| !w.is_extreme())
    }
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.5, 0.25, 0.25];

/// Contiguous prefix/middle/suffix split of time-ordered windows with sizes
/// `⌊r₀·n⌋`, `⌊r₁·n⌋` and the remainder.
pub fn chronological_split(windows: Vec<SampleWindow>, ratios: [f64; 3]) -> Result<Split> {
    let n = windows.len();
    if n < 4 {
        return Err(Error::TooFewWindows { needed: 4, got: n });
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || libm::fabs(ratios.iter().sum::<f64>() - 1.0) > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    if let Some(pos) = windows.windows(2).position(|w| w[0].start_time >= w[1].start_time) {
        return Err(Error::Unsorted(pos + 1));
    }
    let floor = |r: f64| libm::floor(r * n as f64 + 1e-9) as usize;
    let n_train = floor(ratios[0]);
    let n_valid = floor(ratios[1]).min(n - n_train);
    let mut rest = windows;
    let test = rest.split_off(n_train + n_valid);
    let valid = rest.split_off(n_train);
    Ok(Split { train: rest, valid, test })
}

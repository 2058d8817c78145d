//! Attention-driven causal identification and intervention.
//!
//! For each extreme-weather training window the pre-trained model's
//! attention maps rank source parcels and source steps by influence. The
//! top proportion are causal; everything else is replaced with values from a
//! calendar-matched normal window, yielding new samples that keep the causal
//! context but vary the irrelevant one.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::SampleWindow;
use crate::encoders::{AttentionBundle, AttentionMap};
use crate::error::{Error, Result};
use crate::model::WedNet;

/// `⌈r·n⌉`, at least one. The small offset keeps `r·n` values that are whole
/// numbers up to rounding from spilling into the next integer.
pub fn selection_size(ratio: f64, n: usize) -> usize {
    (libm::ceil(ratio * n as f64 - 1e-9) as usize).clamp(1, n)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("causal ratio must lie in (0, 1], got {ratio}")))
    }
}

/// Indices sorted by descending score, ties to the lower index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn top(scores: &[f64], k: usize) -> Vec<usize> {
    let mut t = ranking(scores);
    t.truncate(k);
    t.sort_unstable();
    t
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
    u.sort_unstable();
    u.dedup();
    u
}

/// `scores[target][source]`: attention from `target` to `source`, averaged
/// over the map's groups.
pub fn influence(map: &AttentionMap) -> Vec<Vec<f64>> {
    let len = map.len;
    let mut s = vec![vec![0.0; len]; len];
    for g in 0..map.groups {
        for (q, row) in s.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v += map.get(g, q, k);
            }
        }
    }
    let inv = 1.0 / map.groups as f64;
    s.iter_mut().flatten().for_each(|v| *v *= inv);
    s
}

fn expand(steps: &[usize], window: usize, len: usize) -> Vec<usize> {
    let mut out = vec![false; len];
    for &s in steps {
        let lo = s.saturating_sub(window);
        let hi = (s + window).min(len - 1);
        out[lo..=hi].iter_mut().for_each(|v| *v = true);
    }
    (0..len).filter(|&k| out[k]).collect()
}

fn check_pair(a: &AttentionMap, b: Option<&AttentionMap>) -> Result<()> {
    match b {
        Some(b) if b.groups != a.groups || b.len != a.len => {
            Err(Error::Shape(format!("attention maps {}x{} and {}x{}", a.groups, a.len, b.groups, b.len)))
        }
        _ => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialSelection {
    /// Causal source parcels of each target parcel, sorted.
    pub per_parcel: Vec<Vec<usize>>,
    pub causal: Vec<bool>,
}

/// Ranks source parcels per target from spatial maps (`T×N×N`).
pub fn identify_spatial(self_map: &AttentionMap, cross_map: Option<&AttentionMap>, ratio: f64) -> Result<SpatialSelection> {
    check_ratio(ratio)?;
    check_pair(self_map, cross_map)?;
    let n = self_map.len;
    let k = selection_size(ratio, n);
    let sf = influence(self_map);
    let sw = cross_map.map(influence);
    let per_parcel: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let a = top(&sf[i], k);
            match &sw {
                Some(sw) => union(&a, &top(&sw[i], k)),
                None => a,
            }
        })
        .collect();
    let mut causal = vec![false; n];
    per_parcel.iter().flatten().for_each(|&j| causal[j] = true);
    if causal.iter().all(|&c| c) && k < n {
        let mut aggregate = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                aggregate[j] += sf[i][j] + sw.as_ref().map_or(0.0, |sw| sw[i][j]);
            }
        }
        for &j in &ranking(&aggregate)[k..] {
            causal[j] = false;
        }
    }
    Ok(SpatialSelection { per_parcel, causal })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalSelection {
    /// Causal source steps of each query step after window expansion.
    pub per_step: Vec<Vec<usize>>,
    pub causal: Vec<bool>,
}

/// Ranks source steps from temporal maps (`N×T×T`) and widens every chosen
/// step by `±window`.
pub fn identify_temporal(
    self_map: &AttentionMap,
    cross_map: Option<&AttentionMap>,
    ratio: f64,
    window: usize,
) -> Result<TemporalSelection> {
    check_ratio(ratio)?;
    check_pair(self_map, cross_map)?;
    let t = self_map.len;
    let k = selection_size(ratio, t);
    let sf = influence(self_map);
    let sw = cross_map.map(influence);
    let per_step = (0..t)
        .map(|q| {
            let a = top(&sf[q], k);
            let chosen = match &sw {
                Some(sw) => union(&a, &top(&sw[q], k)),
                None => a,
            };
            expand(&chosen, window, t)
        })
        .collect();
    let mut aggregate = vec![0.0; t];
    for q in 0..t {
        for tau in 0..t {
            aggregate[tau] += sf[q][tau] + sw.as_ref().map_or(0.0, |sw| sw[q][tau]);
        }
    }
    let mut causal = vec![false; t];
    for s in expand(&top(&aggregate, k), window, t) {
        causal[s] = true;
    }
    Ok(TemporalSelection { per_step, causal })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CausalMask {
    pub causal_parcels: Vec<bool>,
    pub causal_steps: Vec<bool>,
    pub per_parcel_neighbors: Vec<Vec<usize>>,
    pub per_step_sources: Vec<Vec<usize>>,
    pub ratio: f64,
    pub window: usize,
}

impl CausalMask {
    pub fn from_bundle(bundle: &AttentionBundle, ratio: f64, window: usize) -> Result<Self> {
        let s = identify_spatial(&bundle.self_spatial, bundle.cross_spatial.as_ref(), ratio)?;
        let t = identify_temporal(&bundle.self_temporal, bundle.cross_temporal.as_ref(), ratio, window)?;
        Ok(Self {
            causal_parcels: s.causal,
            causal_steps: t.causal,
            per_parcel_neighbors: s.per_parcel,
            per_step_sources: t.per_step,
            ratio,
            window,
        })
    }

    /// Mask with the given causal sets and no per-target detail.
    pub fn from_sets(causal_parcels: Vec<bool>, causal_steps: Vec<bool>) -> Self {
        Self { causal_parcels, causal_steps, per_parcel_neighbors: Vec::new(), per_step_sources: Vec::new(), ratio: 1.0, window: 0 }
    }

    pub fn non_causal_parcels(&self) -> Vec<usize> {
        (0..self.causal_parcels.len()).filter(|&i| !self.causal_parcels[i]).collect()
    }

    pub fn non_causal_steps(&self) -> Vec<usize> {
        (0..self.causal_steps.len()).filter(|&t| !self.causal_steps[t]).collect()
    }

    /// Whether position `(t, i)` is taken from the reference.
    pub fn replaces(&self, t: usize, i: usize) -> bool {
        !self.causal_parcels[i] || !self.causal_steps[t]
    }
}

/// Copies the history at every non-causal `(t, i)` from `reference` and
/// relabels the result. Targets and calendar stay those of `extreme`.
pub fn intervene(extreme: &SampleWindow, reference: &SampleWindow, mask: &CausalMask) -> Result<SampleWindow> {
    let (t, n) = (extreme.history_len(), extreme.n_parcels);
    if reference.history_len() != t
        || reference.n_parcels != n
        || reference.d_flow != extreme.d_flow
        || reference.d_weather != extreme.d_weather
        || reference.flow_hist.len() != extreme.flow_hist.len()
        || reference.weather_hist.len() != extreme.weather_hist.len()
    {
        return Err(Error::Shape(format!("reference {} does not match window {}", reference.id, extreme.id)));
    }
    if mask.causal_parcels.len() != n || mask.causal_steps.len() != t {
        return Err(Error::Shape(format!(
            "mask covers {} steps and {} parcels, window has {t} and {n}",
            mask.causal_steps.len(),
            mask.causal_parcels.len()
        )));
    }
    let mut out = extreme.clone();
    let (df, dw) = (extreme.d_flow, extreme.d_weather);
    for s in 0..t {
        for i in 0..n {
            if mask.replaces(s, i) {
                let p = s * n + i;
                out.flow_hist[p * df..(p + 1) * df].copy_from_slice(&reference.flow_hist[p * df..(p + 1) * df]);
                out.weather_hist[p * dw..(p + 1) * dw].copy_from_slice(&reference.weather_hist[p * dw..(p + 1) * dw]);
            }
        }
    }
    out.relabel()?;
    Ok(out)
}

/// Normal windows of `pool` sharing the day type and start hour of `extreme`.
pub fn matching_references(extreme: &SampleWindow, pool: &[SampleWindow]) -> Vec<usize> {
    let hour = extreme.start_time.hour_of_day();
    (0..pool.len())
        .filter(|&k| {
            let c = &pool[k];
            !c.is_extreme() && c.day_type() == extreme.day_type() && c.start_time.hour_of_day() == hour
        })
        .collect()
}

/// Index into `pool` of a uniformly drawn matching normal window.
pub fn select_reference<R: Rng + ?Sized>(extreme: &SampleWindow, pool: &[SampleWindow], rng: &mut R) -> Result<usize> {
    let matches = matching_references(extreme, pool);
    matches.choose(rng).copied().ok_or(Error::NoReferenceMatch {
        day_type: extreme.day_type(),
        hour: extreme.start_time.hour_of_day(),
    })
}

/// `count` references, without replacement when enough matches exist.
pub fn select_references<R: Rng + ?Sized>(
    extreme: &SampleWindow,
    pool: &[SampleWindow],
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let matches = matching_references(extreme, pool);
    if matches.is_empty() {
        return Err(Error::NoReferenceMatch { day_type: extreme.day_type(), hour: extreme.start_time.hour_of_day() });
    }
    if matches.len() >= count {
        let mut m = matches;
        let (chosen, _) = m.partial_shuffle(rng, count);
        Ok(chosen.to_vec())
    } else {
        Ok((0..count).map(|_| *matches.choose(rng).expect("non-empty")).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    /// Augmented samples per extreme window.
    pub r: usize,
    pub ratio: f64,
    pub window: usize,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { r: 2, ratio: 0.2, window: 1, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSample {
    pub base_id: u64,
    pub reference_id: u64,
    /// Position of the base window in the input dataset.
    pub base_index: usize,
    pub reference_index: usize,
    pub mask: CausalMask,
    pub result: SampleWindow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkippedExtreme {
    pub id: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationRun {
    /// The input windows followed by every augmented window.
    pub dataset: Vec<SampleWindow>,
    pub samples: Vec<AugmentedSample>,
    pub extremes: usize,
    pub skipped: Vec<SkippedExtreme>,
    pub warnings: Vec<String>,
}

/// Augments `windows` using attention maps of `model`. Each extreme window
/// draws from its own RNG stream so results do not depend on processing
/// order.
pub fn augment_dataset(model: &WedNet, windows: &[SampleWindow], params: AugmentParams) -> Result<AugmentationRun> {
    check_ratio(params.ratio)?;
    let mut run = AugmentationRun {
        dataset: windows.to_vec(),
        samples: Vec::new(),
        extremes: 0,
        skipped: Vec::new(),
        warnings: Vec::new(),
    };
    for (index, base) in windows.iter().enumerate() {
        if !base.is_extreme() {
            continue;
        }
        run.extremes += 1;
        if params.r == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(index as u64);
        let refs = match select_references(base, windows, params.r, &mut rng) {
            Ok(r) => r,
            Err(e @ Error::NoReferenceMatch { .. }) => {
                run.warnings.push(format!("window {}: {e}", base.id));
                run.skipped.push(SkippedExtreme { id: base.id, reason: format!("{e}") });
                continue;
            }
            Err(e) => return Err(e),
        };
        let bundle = model.extract_attention(&model.prepare(base)?)?;
        let mask = CausalMask::from_bundle(&bundle, params.ratio, params.window)?;
        for reference_index in refs {
            let reference = &windows[reference_index];
            let result = intervene(base, reference, &mask)?;
            run.samples.push(AugmentedSample {
                base_id: base.id,
                reference_id: reference.id,
                base_index: index,
                reference_index,
                mask: mask.clone(),
                result,
            });
        }
    }
    if run.extremes == 0 {
        run.warnings.push(String::from("no extreme windows; dataset unchanged"));
    }
    run.dataset.extend(run.samples.iter().map(|s| s.result.clone()));
    Ok(run)
}

//! Input embedding: feature projection, adaptive tables and calendar tables.
//!
//! Output columns are ordered
//! `[feature | temporal-adaptive | spatial-adaptive | time-of-day | day-of-week]`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::params::{ParamId, ParamStore};

pub const TIME_OF_DAY_SLOTS: usize = 24;
pub const DAYS_OF_WEEK: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingDims {
    pub input: usize,
    pub feature: usize,
    pub adaptive: usize,
    pub time_of_day: usize,
    pub day_of_week: usize,
    pub steps: usize,
    pub parcels: usize,
}

impl EmbeddingDims {
    pub fn hidden(&self) -> usize {
        self.feature + 2 * self.adaptive + self.time_of_day + self.day_of_week
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingParams {
    pub dims: EmbeddingDims,
    pub feature_proj: Linear,
    pub temporal_table: ParamId,
    pub spatial_table: ParamId,
    pub tod_table: ParamId,
    pub dow_table: ParamId,
}

impl EmbeddingParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dims: EmbeddingDims, rng: &mut R) -> Self {
        let feature_proj = Linear::init(store, &format!("{prefix}.feature_proj"), dims.input, dims.feature, true, rng);
        let temporal_table = store.add_uniform(&format!("{prefix}.temporal"), dims.steps, dims.adaptive, dims.adaptive, rng);
        let spatial_table = store.add_uniform(&format!("{prefix}.spatial"), dims.parcels, dims.adaptive, dims.adaptive, rng);
        let tod_table =
            store.add_uniform(&format!("{prefix}.time_of_day"), TIME_OF_DAY_SLOTS, dims.time_of_day, dims.time_of_day, rng);
        let dow_table =
            store.add_uniform(&format!("{prefix}.day_of_week"), DAYS_OF_WEEK, dims.day_of_week, dims.day_of_week, rng);
        Self { dims, feature_proj, temporal_table, spatial_table, tod_table, dow_table }
    }
}

/// Embeds a `(T·N) × d` input (rows `t·N + i`) into `(T·N) × d_h`.
pub fn embed(tape: &mut Tape, p: &EmbeddingParams, input: Var, time_of_day: &[u8], day_of_week: &[u8]) -> Result<Var> {
    let EmbeddingDims { steps: t, parcels: n, .. } = p.dims;
    let x = tape.value(input);
    if x.cols != p.dims.input || x.rows != t * n {
        return Err(Error::Shape(format!("embedding expects {}x{}, got {}x{}", t * n, p.dims.input, x.rows, x.cols)));
    }
    if time_of_day.len() != t || day_of_week.len() != t {
        return Err(Error::Calendar(format!("need {t} calendar entries per stream")));
    }
    if let Some(bad) = time_of_day.iter().find(|&&h| h as usize >= TIME_OF_DAY_SLOTS) {
        return Err(Error::Calendar(format!("time of day {bad}")));
    }
    if let Some(bad) = day_of_week.iter().find(|&&d| d as usize >= DAYS_OF_WEEK) {
        return Err(Error::Calendar(format!("day of week {bad}")));
    }

    let per_row = |f: &dyn Fn(usize, usize) -> usize| -> Vec<usize> {
        (0..t).flat_map(|s| (0..n).map(move |i| (s, i))).map(|(s, i)| f(s, i)).collect()
    };
    let feat = p.feature_proj.forward(tape, input);
    let temporal = tape.param(p.temporal_table);
    let temporal = tape.gather_rows(temporal, per_row(&|s, _| s));
    let spatial = tape.param(p.spatial_table);
    let spatial = tape.gather_rows(spatial, per_row(&|_, i| i));
    let tod = tape.param(p.tod_table);
    let tod = tape.gather_rows(tod, per_row(&|s, _| time_of_day[s] as usize));
    let dow = tape.param(p.dow_table);
    let dow = tape.gather_rows(dow, per_row(&|s, _| day_of_week[s] as usize));
    Ok(tape.concat_cols(&[feat, temporal, spatial, tod, dow]))
}

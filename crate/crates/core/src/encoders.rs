//! Spatio-temporal attention encoders.
//!
//! The intrinsic encoder runs self-attention over the flow stream. The
//! weather encoder uses the flow stream as queries and the (fixed) weather
//! embedding as keys and values in every block. Each attention sub-layer is
//! post-norm: `x = LN(q + Attn)`, `y = LN(x + FFN(x))`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{SeqLayout, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{check_finite, LayerNormParams, Linear, Mode};
use crate::params::{ParamId, ParamStore};

/// Head-averaged attention weights, `[group][query][key]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub groups: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl AttentionMap {
    pub fn zeros(groups: usize, len: usize) -> Self {
        Self { groups, len, data: vec![0.0; groups * len * len] }
    }

    #[inline]
    pub fn get(&self, group: usize, query: usize, key: usize) -> f64 {
        self.data[(group * self.len + query) * self.len + key]
    }

    pub fn row(&self, group: usize, query: usize) -> &[f64] {
        let start = (group * self.len + query) * self.len;
        &self.data[start..start + self.len]
    }

    fn accumulate(&mut self, other: &[f64], weight: f64) {
        for (a, b) in self.data.iter_mut().zip(other) {
            *a += b * weight;
        }
    }

    /// Largest deviation of a row sum from one, and the smallest entry.
    pub fn stochasticity(&self) -> (f64, f64) {
        let mut worst = 0.0f64;
        for g in 0..self.groups {
            for q in 0..self.len {
                worst = worst.max(libm::fabs(self.row(g, q).iter().sum::<f64>() - 1.0));
            }
        }
        let min = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        (worst, min)
    }
}

/// Temporal maps are `N×T×T`, spatial maps `T×N×N`. Cross maps are absent
/// for variants without a weather cross-attention branch.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBundle {
    pub self_temporal: AttentionMap,
    pub self_spatial: AttentionMap,
    pub cross_temporal: Option<AttentionMap>,
    pub cross_spatial: Option<AttentionMap>,
}

impl AttentionBundle {
    pub fn maps(&self) -> impl Iterator<Item = &AttentionMap> {
        [Some(&self.self_temporal), Some(&self.self_spatial), self.cross_temporal.as_ref(), self.cross_spatial.as_ref()]
            .into_iter()
            .flatten()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlockParams {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub w_value: ParamId,
    pub output: Linear,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm_attn: LayerNormParams,
    pub norm_ffn: LayerNormParams,
    pub heads: usize,
}

impl AttentionBlockParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        heads: usize,
        ffn_mult: usize,
        rng: &mut R,
    ) -> Self {
        let w_query = store.add_uniform(&format!("{prefix}.query"), width, width, width, rng);
        let w_key = store.add_uniform(&format!("{prefix}.key"), width, width, width, rng);
        let w_value = store.add_uniform(&format!("{prefix}.value"), width, width, width, rng);
        let output = Linear::init(store, &format!("{prefix}.output"), width, width, true, rng);
        let ffn_in = Linear::init(store, &format!("{prefix}.ffn_in"), width, width * ffn_mult, true, rng);
        let ffn_out = Linear::init(store, &format!("{prefix}.ffn_out"), width * ffn_mult, width, true, rng);
        let norm_attn = LayerNormParams::init(store, &format!("{prefix}.norm_attn"), width);
        let norm_ffn = LayerNormParams::init(store, &format!("{prefix}.norm_ffn"), width);
        Self { w_query, w_key, w_value, output, ffn_in, ffn_out, norm_attn, norm_ffn, heads }
    }
}

/// One encoder block: a temporal sub-layer followed by a spatial one.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub temporal: AttentionBlockParams,
    pub spatial: AttentionBlockParams,
}

impl EncoderBlock {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        heads: usize,
        ffn_mult: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            temporal: AttentionBlockParams::init(store, &format!("{prefix}.temporal"), width, heads, ffn_mult, rng),
            spatial: AttentionBlockParams::init(store, &format!("{prefix}.spatial"), width, heads, ffn_mult, rng),
        }
    }
}

/// Output of one attention sub-layer and the attention node that produced it.
pub struct SublayerOutput {
    pub out: Var,
    pub attention: Var,
}

/// Attention sub-layer with residual, norm and feed-forward. Queries come
/// from `q_src`, keys and values from `kv_src`.
pub fn attention_sublayer(
    tape: &mut Tape,
    p: &AttentionBlockParams,
    q_src: Var,
    kv_src: Var,
    layout: SeqLayout,
    mode: &mut Mode,
    stage: &'static str,
    block: usize,
) -> Result<SublayerOutput> {
    let (qm, km) = (tape.value(q_src), tape.value(kv_src));
    if !qm.same_shape(km) || qm.rows != layout.rows() {
        return Err(Error::Shape(format!(
            "attention sources {}x{} and {}x{} for {} rows",
            qm.rows,
            qm.cols,
            km.rows,
            km.cols,
            layout.rows()
        )));
    }
    let wq = tape.param(p.w_query);
    let wk = tape.param(p.w_key);
    let wv = tape.param(p.w_value);
    let q = tape.matmul(q_src, wq);
    let k = tape.matmul(kv_src, wk);
    let v = tape.matmul(kv_src, wv);
    let keep = mode.dropout_mask(layout.groups * p.heads * layout.len * layout.len);
    let attention = tape.attention(q, k, v, layout, p.heads, keep);
    let mixed = p.output.forward(tape, attention);
    let residual = tape.add(q_src, mixed);
    let x = p.norm_attn.forward(tape, residual);
    let hidden = p.ffn_in.forward(tape, x);
    let hidden = tape.gelu(hidden);
    let ff = p.ffn_out.forward(tape, hidden);
    let ff = mode.dropout(tape, ff);
    let residual = tape.add(x, ff);
    let out = p.norm_ffn.forward(tape, residual);
    check_finite(tape, out, stage, block)?;
    Ok(SublayerOutput { out, attention })
}

/// Attention along time for each parcel. Returns the output and the
/// head-averaged `N×T×T` map.
pub fn temporal_attention(
    tape: &mut Tape,
    p: &AttentionBlockParams,
    q_src: Var,
    kv_src: Var,
    steps: usize,
    parcels: usize,
    mode: &mut Mode,
) -> Result<(Var, AttentionMap)> {
    let layout = SeqLayout::temporal(steps, parcels);
    let s = attention_sublayer(tape, p, q_src, kv_src, layout, mode, "temporal", 0)?;
    let (_, data) = tape.attention_map(s.attention).expect("attention node");
    Ok((s.out, AttentionMap { groups: parcels, len: steps, data }))
}

/// Attention across parcels at each step, with its `T×N×N` map.
pub fn spatial_attention(
    tape: &mut Tape,
    p: &AttentionBlockParams,
    q_src: Var,
    kv_src: Var,
    steps: usize,
    parcels: usize,
    mode: &mut Mode,
) -> Result<(Var, AttentionMap)> {
    let layout = SeqLayout::spatial(steps, parcels);
    let s = attention_sublayer(tape, p, q_src, kv_src, layout, mode, "spatial", 0)?;
    let (_, data) = tape.attention_map(s.attention).expect("attention node");
    Ok((s.out, AttentionMap { groups: steps, len: parcels, data }))
}

/// Encoder output plus block-averaged maps when the mode collects them.
pub struct EncoderOutput {
    pub hidden: Var,
    pub maps: Option<(AttentionMap, AttentionMap)>,
}

fn run_encoder(
    tape: &mut Tape,
    blocks: &[EncoderBlock],
    h_f: Var,
    kv: Option<Var>,
    steps: usize,
    parcels: usize,
    mode: &mut Mode,
    stage: &'static str,
) -> Result<EncoderOutput> {
    let collect = mode.collect_attention;
    let mut temporal_map = AttentionMap::zeros(parcels, steps);
    let mut spatial_map = AttentionMap::zeros(steps, parcels);
    let weight = 1.0 / blocks.len().max(1) as f64;
    let mut x = h_f;
    for (b, block) in blocks.iter().enumerate() {
        let src = kv.unwrap_or(x);
        let t = attention_sublayer(tape, &block.temporal, x, src, SeqLayout::temporal(steps, parcels), mode, stage, b)?;
        x = t.out;
        let src = kv.unwrap_or(x);
        let s = attention_sublayer(tape, &block.spatial, x, src, SeqLayout::spatial(steps, parcels), mode, stage, b)?;
        x = s.out;
        if collect {
            temporal_map.accumulate(&tape.attention_map(t.attention).expect("attention node").1, weight);
            spatial_map.accumulate(&tape.attention_map(s.attention).expect("attention node").1, weight);
        }
    }
    Ok(EncoderOutput { hidden: x, maps: collect.then_some((temporal_map, spatial_map)) })
}

/// Intrinsic encoder: stacked temporal and spatial self-attention on flow.
pub fn i_stenc(
    tape: &mut Tape,
    blocks: &[EncoderBlock],
    h_f: Var,
    steps: usize,
    parcels: usize,
    mode: &mut Mode,
) -> Result<EncoderOutput> {
    run_encoder(tape, blocks, h_f, None, steps, parcels, mode, "istenc")
}

/// Weather encoder: flow-stream queries against the weather embedding `h_w`,
/// which is reused unchanged as the key/value source of every block.
pub fn w_stenc(
    tape: &mut Tape,
    blocks: &[EncoderBlock],
    h_f: Var,
    h_w: Var,
    steps: usize,
    parcels: usize,
    mode: &mut Mode,
) -> Result<EncoderOutput> {
    run_encoder(tape, blocks, h_f, Some(h_w), steps, parcels, mode, "wstenc")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn blocks(store: &mut ParamStore, prefix: &str, count: usize, width: usize, heads: usize) -> Vec<EncoderBlock> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..count).map(|b| EncoderBlock::init(store, &format!("{prefix}.block{b}"), width, heads, 4, &mut rng)).collect()
    }

    #[test]
    fn constant_keys_give_uniform_weights() {
        let mut store = ParamStore::new();
        let bl = blocks(&mut store, "x", 1, 8, 2);
        let mut tape = Tape::new(&store);
        let q = tape.constant(input(12, 8, 1));
        let row = input(1, 8, 2);
        let kv = tape.constant(Matrix::from_vec(12, 8, (0..12).flat_map(|_| row.data.clone()).collect()));
        let (_, map) = temporal_attention(&mut tape, &bl[0].temporal, q, kv, 3, 4, &mut Mode::eval()).unwrap();
        assert!(map.data.iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-12));
        let (_, smap) = spatial_attention(&mut tape, &bl[0].spatial, q, kv, 3, 4, &mut Mode::eval()).unwrap();
        assert!(smap.data.iter().all(|&w| (w - 0.25).abs() < 1e-12));
    }

    #[test]
    fn single_parcel_spatial_attention_is_one() {
        let mut store = ParamStore::new();
        let bl = blocks(&mut store, "x", 1, 8, 2);
        let mut tape = Tape::new(&store);
        let q = tape.constant(input(3, 8, 3));
        let (out, map) = spatial_attention(&mut tape, &bl[0].spatial, q, q, 3, 1, &mut Mode::eval()).unwrap();
        assert!(map.data.iter().all(|&w| w == 1.0));
        assert!(tape.value(out).is_finite());
    }

    #[test]
    fn temporal_attention_is_parcel_equivariant() {
        let mut store = ParamStore::new();
        let bl = blocks(&mut store, "x", 1, 8, 2);
        let (t, n) = (3, 4);
        let x = input(t * n, 8, 4);
        let perm = [2usize, 0, 3, 1];
        let mut xp = Matrix::zeros(t * n, 8);
        for s in 0..t {
            for i in 0..n {
                xp.row_mut(s * n + i).copy_from_slice(x.row(s * n + perm[i]));
            }
        }
        let mut tape = Tape::new(&store);
        let a = tape.constant(x);
        let b = tape.constant(xp);
        let (oa, ma) = temporal_attention(&mut tape, &bl[0].temporal, a, a, t, n, &mut Mode::eval()).unwrap();
        let (ob, mb) = temporal_attention(&mut tape, &bl[0].temporal, b, b, t, n, &mut Mode::eval()).unwrap();
        for s in 0..t {
            for i in 0..n {
                assert_eq!(tape.value(ob).row(s * n + i), tape.value(oa).row(s * n + perm[i]));
                assert_eq!(mb.row(i, s), ma.row(perm[i], s));
            }
        }
    }

    #[test]
    fn encoders_preserve_shape_and_branches_stay_separate() {
        let mut store = ParamStore::new();
        let ib = blocks(&mut store, "istenc", 2, 8, 2);
        let wb = blocks(&mut store, "wstenc", 2, 8, 2);
        let hf = input(15, 8, 6);
        let hw = input(15, 8, 7);
        let run = |hw: Matrix| {
            let mut tape = Tape::new(&store);
            let f = tape.constant(hf.clone());
            let w = tape.constant(hw);
            let i = i_stenc(&mut tape, &ib, f, 5, 3, &mut Mode::eval_with_attention()).unwrap();
            let c = w_stenc(&mut tape, &wb, f, w, 5, 3, &mut Mode::eval_with_attention()).unwrap();
            (tape.value(i.hidden).clone(), tape.value(c.hidden).clone(), i.maps.unwrap(), c.maps.unwrap())
        };
        let (i1, c1, im, cm) = run(hw.clone());
        assert_eq!((i1.rows, i1.cols), (15, 8));
        for m in [&im.0, &im.1, &cm.0, &cm.1] {
            let (dev, min) = m.stochasticity();
            assert!(dev < 1e-12 && min >= 0.0);
        }
        let mut hw2 = hw;
        hw2.data[3 * 8 + 1] += 0.5;
        let (i2, c2, _, _) = run(hw2);
        assert_eq!(i1, i2);
        assert_ne!(c1, c2);
    }

    #[test]
    fn zero_output_projection_reduces_to_ffn_path() {
        let mut store = ParamStore::new();
        let bl = blocks(&mut store, "x", 1, 8, 2);
        for p in [&bl[0].temporal, &bl[0].spatial] {
            *store.get_mut(p.output.weight) = Matrix::zeros(8, 8);
            *store.get_mut(p.output.bias.unwrap()) = Matrix::zeros(1, 8);
        }
        let x = input(6, 8, 9);
        let mut tape = Tape::new(&store);
        let xv = tape.constant(x.clone());
        let out = i_stenc(&mut tape, &bl, xv, 3, 2, &mut Mode::eval()).unwrap();
        assert!(tape.value(out.hidden).is_finite());
        // without the attention mixture the output no longer depends on other rows
        let mut x2 = x.clone();
        x2.row_mut(5).iter_mut().for_each(|v| *v += 1.0);
        let mut tape2 = Tape::new(&store);
        let xv2 = tape2.constant(x2);
        let out2 = i_stenc(&mut tape2, &bl, xv2, 3, 2, &mut Mode::eval()).unwrap();
        for r in 0..5 {
            assert_eq!(tape.value(out.hidden).row(r), tape2.value(out2.hidden).row(r));
        }
    }
}

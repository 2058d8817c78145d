//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records coarse operations (matrix products, fused attention,
//! layer norm, ...) in evaluation order. `backward` walks the tape in reverse
//! and returns gradients for every recorded node plus every parameter that
//! was read through [`Tape::param`].

use alloc::vec;
use alloc::vec::Vec;

use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::{dot, gemm_nn, gemm_nt, gemm_tn, softmax_in_place, Matrix};

pub const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How rows of a `(groups·len) × d` activation form attention sequences.
/// Row of element `s` in group `g` is `g·group_stride + s·elem_stride`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeqLayout {
    pub groups: usize,
    pub len: usize,
    pub group_stride: usize,
    pub elem_stride: usize,
}

impl SeqLayout {
    /// Attention along time for every parcel; rows are laid out `t·n + i`.
    pub fn temporal(t: usize, n: usize) -> Self {
        Self { groups: n, len: t, group_stride: 1, elem_stride: n }
    }

    /// Attention across parcels at every time step.
    pub fn spatial(t: usize, n: usize) -> Self {
        Self { groups: t, len: n, group_stride: n, elem_stride: 1 }
    }

    #[inline]
    pub fn row(&self, group: usize, elem: usize) -> usize {
        group * self.group_stride + elem * self.elem_stride
    }

    pub fn rows(&self) -> usize {
        self.groups * self.len
    }
}

#[derive(Debug)]
struct AttentionCache {
    layout: SeqLayout,
    heads: usize,
    scale: f64,
    /// `[group][head][query][key]`, before dropout.
    probs: Vec<f64>,
    /// Dropout multipliers with the same layout as `probs`.
    keep: Option<Vec<f64>>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    AffineCols(Var, Vec<f64>),
    Sigmoid(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, cache: AttentionCache },
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    Reshape(Var),
    Grl(Var, f64),
    Mae(Var, Vec<f64>),
    CrossEntropy(Var, usize),
}

struct Node {
    value: Option<Matrix>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    pub params: ParamGrads,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a recorded node, if any flowed there.
    pub fn of(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].as_ref()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is propagated into it.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.nodes.push(Node { value: Some(m), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Input leaf whose gradient is tracked (used by gradient checks).
    pub fn leaf(&mut self, m: Matrix) -> Var {
        self.nodes.push(Node { value: Some(m), op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.cols, bm.rows, "matmul shape mismatch {}x{} · {}x{}", am.rows, am.cols, bm.rows, bm.cols);
        let mut out = Matrix::zeros(am.rows, bm.cols);
        gemm_nn(am.rows, am.cols, bm.cols, &am.data, &bm.data, &mut out.data);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.cols, bm.cols, "matmul_t shape mismatch");
        let mut out = Matrix::zeros(am.rows, bm.rows);
        gemm_nt(am.rows, am.cols, bm.rows, &am.data, &bm.data, &mut out.data);
        self.push(out, Op::MatMulT(a, b), &[a, b])
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (am, bm) = (self.value(a), self.value(b));
        assert!(am.same_shape(bm), "elementwise shape mismatch");
        Matrix {
            rows: am.rows,
            cols: am.cols,
            data: am.data.iter().zip(&bm.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1×c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xm, rm) = (self.value(x), self.value(row));
        assert!(rm.rows == 1 && rm.cols == xm.cols, "add_row shape mismatch");
        let mut out = xm.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&rm.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, row), &[x, row])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, x: Var, factors: Vec<f64>) -> Var {
        let xm = self.value(x);
        assert_eq!(xm.len(), factors.len());
        let data = xm.data.iter().zip(&factors).map(|(a, b)| a * b).collect();
        let out = Matrix { rows: xm.rows, cols: xm.cols, data };
        self.push(out, Op::MulConst(x, factors), &[x])
    }

    /// `y[r][c] = x[r][c]·scale[c] + shift[c]` with constant scale/shift.
    pub fn affine_cols(&mut self, x: Var, scale: Vec<f64>, shift: &[f64]) -> Var {
        let xm = self.value(x);
        assert!(scale.len() == xm.cols && shift.len() == xm.cols);
        let mut out = xm.clone();
        for r in 0..out.rows {
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = *o * scale[c] + shift[c];
            }
        }
        self.push(out, Op::AffineCols(x, scale), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(x), &[x])
    }

    /// Row-wise layer normalization with affine `1×c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xm = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        assert!(g.cols == xm.cols && b.cols == xm.cols && g.rows == 1 && b.rows == 1);
        let cols = xm.cols;
        let mut xhat = vec![0.0; xm.len()];
        let mut inv_std = vec![0.0; xm.rows];
        let mut out = Matrix::zeros(xm.rows, cols);
        for r in 0..xm.rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out.data[r * cols + c] = h * g.data[c] + b.data[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias])
    }

    /// Fused multi-head scaled dot-product attention. `q`, `k`, `v` share the
    /// same `layout`; the softmax runs over the keys of each sequence.
    /// `keep` optionally holds dropout multipliers for the attention weights,
    /// laid out `[group][head][query][key]`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        layout: SeqLayout,
        heads: usize,
        keep: Option<Vec<f64>>,
    ) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let d = qm.cols;
        assert!(qm.same_shape(km) && qm.same_shape(vm), "attention operands must share a shape");
        assert_eq!(qm.rows, layout.rows(), "attention layout does not cover the rows");
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        let dh = d / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let len = layout.len;
        let mut probs = vec![0.0; layout.groups * heads * len * len];
        let mut out = Matrix::zeros(qm.rows, d);
        let mut weights = vec![0.0; len];
        for g in 0..layout.groups {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for s1 in 0..len {
                    let qrow = &qm.row(layout.row(g, s1))[cols.clone()];
                    for (s2, w) in weights.iter_mut().enumerate() {
                        *w = dot(qrow, &km.row(layout.row(g, s2))[cols.clone()]) * scale;
                    }
                    softmax_in_place(&mut weights);
                    let base = ((g * heads + h) * len + s1) * len;
                    probs[base..base + len].copy_from_slice(&weights);
                    let orow_idx = layout.row(g, s1);
                    for s2 in 0..len {
                        let mut p = weights[s2];
                        if let Some(keep) = &keep {
                            p *= keep[base + s2];
                        }
                        if p == 0.0 {
                            continue;
                        }
                        let vrow = &vm.row(layout.row(g, s2))[cols.clone()];
                        let orow = &mut out.data[orow_idx * d + cols.start..orow_idx * d + cols.end];
                        for (o, &x) in orow.iter_mut().zip(vrow) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let cache = AttentionCache { layout, heads, scale, probs, keep };
        self.push(out, Op::Attention { q, k, v, cache }, &[q, k, v])
    }

    /// Head-averaged attention weights of an attention node as
    /// `[group][query][key]`. Returns `None` for other node kinds.
    pub fn attention_map(&self, v: Var) -> Option<(SeqLayout, Vec<f64>)> {
        match &self.nodes[v.0].op {
            Op::Attention { cache, .. } => {
                let AttentionCache { layout, heads, probs, .. } = cache;
                let len = layout.len;
                let mut map = vec![0.0; layout.groups * len * len];
                let inv = 1.0 / *heads as f64;
                for g in 0..layout.groups {
                    for h in 0..*heads {
                        let src = &probs[(g * heads + h) * len * len..(g * heads + h + 1) * len * len];
                        let dst = &mut map[g * len * len..(g + 1) * len * len];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s * inv;
                        }
                    }
                }
                Some((*layout, map))
            }
            _ => None,
        }
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pm = self.value(p);
            assert_eq!(pm.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.data[r * cols + offset..r * cols + offset + pm.cols].copy_from_slice(pm.row(r));
            }
            offset += pm.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// `out[r] = src[index[r]]`
    pub fn gather_rows(&mut self, src: Var, index: Vec<usize>) -> Var {
        let sm = self.value(src);
        let mut out = Matrix::zeros(index.len(), sm.cols);
        for (r, &i) in index.iter().enumerate() {
            assert!(i < sm.rows, "gather index {i} out of range {}", sm.rows);
            out.row_mut(r).copy_from_slice(sm.row(i));
        }
        self.push(out, Op::GatherRows(src, index), &[src])
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let mut out = Matrix::zeros(1, xm.cols);
        for r in 0..xm.rows {
            for (o, v) in out.data.iter_mut().zip(xm.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / xm.rows as f64;
        for o in &mut out.data {
            *o *= inv;
        }
        self.push(out, Op::MeanRows(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let xm = self.value(x);
        assert_eq!(xm.len(), rows * cols, "reshape changes element count");
        let out = Matrix { rows, cols, data: xm.data.clone() };
        self.push(out, Op::Reshape(x), &[x])
    }

    /// Gradient reversal: identity forward, gradient scaled by `-lambda` backward.
    pub fn grl(&mut self, x: Var, lambda: f64) -> Var {
        let out = self.value(x).clone();
        self.push(out, Op::Grl(x, lambda), &[x])
    }

    /// Mean absolute error against a constant target, as a `1×1` node.
    pub fn mae(&mut self, pred: Var, target: Vec<f64>) -> Var {
        let pm = self.value(pred);
        assert_eq!(pm.len(), target.len(), "mae shape mismatch");
        let s: f64 = pm.data.iter().zip(&target).map(|(p, t)| libm::fabs(p - t)).sum();
        let out = Matrix::scalar(s / target.len() as f64);
        self.push(out, Op::Mae(pred, target), &[pred])
    }

    /// Softmax cross-entropy of a `1×c` logit row against `label`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let lm = self.value(logits);
        assert!(lm.rows == 1 && label < lm.cols, "cross_entropy expects a logit row");
        let out = Matrix::scalar(log_sum_exp(&lm.data) - lm.data[label]);
        self.push(out, Op::CrossEntropy(logits, label), &[logits])
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let lm = self.value(loss);
        assert_eq!(lm.len(), 1, "backward expects a scalar loss");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads = ParamGrads::zeros_like(self.params);
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            let y = self.value(Var(idx));
            self.backprop(&node.op, y, &gy, &mut grads, &mut pgrads);
            grads[idx] = Some(gy);
        }
        Gradients { nodes: grads, params: pgrads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop(
        &self,
        op: &Op,
        y: &Matrix,
        gy: &Matrix,
        grads: &mut [Option<Matrix>],
        pgrads: &mut ParamGrads,
    ) {
        match op {
            Op::Leaf => {}
            Op::Param(id) => pgrads.grads[id.0].add_assign(gy),
            Op::MatMul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut ga = Matrix::zeros(am.rows, am.cols);
                    gemm_nt(am.rows, bm.cols, bm.rows, &gy.data, &bm.data, &mut ga.data);
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Matrix::zeros(bm.rows, bm.cols);
                    gemm_tn(am.cols, am.rows, bm.cols, &am.data, &gy.data, &mut gb.data);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMulT(a, b) => {
                // y = a bᵀ ; ga = gy b ; gb = gyᵀ a
                let (am, bm) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut ga = Matrix::zeros(am.rows, am.cols);
                    gemm_nn(am.rows, bm.rows, bm.cols, &gy.data, &bm.data, &mut ga.data);
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Matrix::zeros(bm.rows, bm.cols);
                    gemm_tn(bm.rows, am.rows, am.cols, &gy.data, &am.data, &mut gb.data);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let data = gy.data.iter().zip(&bm.data).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *a, Matrix { rows: am.rows, cols: am.cols, data });
                }
                if self.wants(*b) {
                    let data = gy.data.iter().zip(&am.data).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, Matrix { rows: bm.rows, cols: bm.cols, data });
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, gy.clone());
                if self.wants(*row) {
                    let mut gr = Matrix::zeros(1, gy.cols);
                    for r in 0..gy.rows {
                        for (o, g) in gr.data.iter_mut().zip(gy.row(r)) {
                            *o += g;
                        }
                    }
                    self.accumulate(grads, *row, gr);
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, gy.map(|g| g * c)),
            Op::MulConst(x, f) => {
                let data = gy.data.iter().zip(f).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *x, Matrix { rows: gy.rows, cols: gy.cols, data });
            }
            Op::AffineCols(x, scale) => {
                let mut gx = gy.clone();
                for r in 0..gx.rows {
                    for (c, g) in gx.row_mut(r).iter_mut().enumerate() {
                        *g *= scale[c];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let data = gy.data.iter().zip(&y.data).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, Matrix { rows: gy.rows, cols: gy.cols, data });
            }
            Op::Gelu(x) => {
                let xm = self.value(*x);
                let data = gy.data.iter().zip(&xm.data).map(|(g, &v)| g * gelu_grad(v)).collect();
                self.accumulate(grads, *x, Matrix { rows: gy.rows, cols: gy.cols, data });
            }
            Op::SoftmaxRows(x) => {
                let mut gx = Matrix::zeros(gy.rows, gy.cols);
                for r in 0..gy.rows {
                    let (yr, gr) = (y.row(r), gy.row(r));
                    let s = dot(yr, gr);
                    for (o, (p, g)) in gx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (g - s);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let cols = gy.cols;
                let g = self.value(*gain);
                if self.wants(*x) {
                    let mut gx = Matrix::zeros(gy.rows, cols);
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..gy.rows {
                        let gr = gy.row(r);
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            dxhat[c] = gr[c] * g.data[c];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                        let mean_dx = dot(&dxhat, xh) / cols as f64;
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*gain) || self.wants(*bias) {
                    let mut gg = Matrix::zeros(1, cols);
                    let mut gb = Matrix::zeros(1, cols);
                    for r in 0..gy.rows {
                        let gr = gy.row(r);
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            gg.data[c] += gr[c] * xh[c];
                            gb.data[c] += gr[c];
                        }
                    }
                    self.accumulate(grads, *gain, gg);
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::Attention { q, k, v, cache } => {
                let (gq, gk, gv) = self.attention_backward(*q, *k, *v, cache, gy);
                self.accumulate(grads, *q, gq);
                self.accumulate(grads, *k, gk);
                self.accumulate(grads, *v, gv);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    if self.wants(p) {
                        let mut gp = Matrix::zeros(gy.rows, w);
                        for r in 0..gy.rows {
                            gp.row_mut(r).copy_from_slice(&gy.row(r)[offset..offset + w]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += w;
                }
            }
            Op::GatherRows(src, index) => {
                if self.wants(*src) {
                    let sm = self.value(*src);
                    let mut gs = Matrix::zeros(sm.rows, sm.cols);
                    for (r, &i) in index.iter().enumerate() {
                        for (o, g) in gs.row_mut(i).iter_mut().zip(gy.row(r)) {
                            *o += g;
                        }
                    }
                    self.accumulate(grads, *src, gs);
                }
            }
            Op::MeanRows(x) => {
                let xm = self.value(*x);
                let inv = 1.0 / xm.rows as f64;
                let mut gx = Matrix::zeros(xm.rows, xm.cols);
                for r in 0..xm.rows {
                    for (o, g) in gx.row_mut(r).iter_mut().zip(&gy.data) {
                        *o = g * inv;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => {
                let xm = self.value(*x);
                self.accumulate(grads, *x, Matrix { rows: xm.rows, cols: xm.cols, data: gy.data.clone() });
            }
            Op::Grl(x, lambda) => {
                let factor = -*lambda;
                self.accumulate(grads, *x, gy.map(|g| g * factor));
            }
            Op::Mae(pred, target) => {
                let pm = self.value(*pred);
                let inv = gy.data[0] / target.len() as f64;
                let data = pm
                    .data
                    .iter()
                    .zip(target)
                    .map(|(p, t)| {
                        let d = p - t;
                        if d > 0.0 {
                            inv
                        } else if d < 0.0 {
                            -inv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *pred, Matrix { rows: pm.rows, cols: pm.cols, data });
            }
            Op::CrossEntropy(logits, label) => {
                let lm = self.value(*logits);
                let mut p = lm.data.clone();
                softmax_in_place(&mut p);
                p[*label] -= 1.0;
                let g0 = gy.data[0];
                let data = p.into_iter().map(|v| v * g0).collect();
                self.accumulate(grads, *logits, Matrix { rows: 1, cols: lm.cols, data });
            }
        }
    }

    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        cache: &AttentionCache,
        gy: &Matrix,
    ) -> (Matrix, Matrix, Matrix) {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let AttentionCache { layout, heads, scale, probs, keep } = cache;
        let d = qm.cols;
        let dh = d / heads;
        let len = layout.len;
        let mut gq = Matrix::zeros(qm.rows, d);
        let mut gk = Matrix::zeros(km.rows, d);
        let mut gv = Matrix::zeros(vm.rows, d);
        let mut dp = vec![0.0; len];
        for g in 0..layout.groups {
            for h in 0..*heads {
                let c0 = h * dh;
                for s1 in 0..len {
                    let base = ((g * heads + h) * len + s1) * len;
                    let p = &probs[base..base + len];
                    let r1 = layout.row(g, s1);
                    let gout = &gy.data[r1 * d + c0..r1 * d + c0 + dh];
                    for s2 in 0..len {
                        let r2 = layout.row(g, s2);
                        let mut pe = p[s2];
                        let mut dpv = dot(gout, &vm.data[r2 * d + c0..r2 * d + c0 + dh]);
                        if let Some(keep) = keep {
                            pe *= keep[base + s2];
                            dpv *= keep[base + s2];
                        }
                        dp[s2] = dpv;
                        if pe != 0.0 {
                            let gvr = &mut gv.data[r2 * d + c0..r2 * d + c0 + dh];
                            for (o, x) in gvr.iter_mut().zip(gout) {
                                *o += pe * x;
                            }
                        }
                    }
                    let s = dot(p, &dp);
                    for s2 in 0..len {
                        let dl = p[s2] * (dp[s2] - s) * scale;
                        if dl == 0.0 {
                            continue;
                        }
                        let r2 = layout.row(g, s2);
                        for c in c0..c0 + dh {
                            gq.data[r1 * d + c] += dl * km.data[r2 * d + c];
                            gk.data[r2 * d + c] += dl * qm.data[r1 * d + c];
                        }
                    }
                }
            }
        }
        (gq, gk, gv)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = libm::tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(xs.iter().map(|x| libm::exp(x - max)).sum::<f64>())
}

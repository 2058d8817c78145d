//! Learnable pattern banks queried by softmax similarity.

use alloc::format;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{LayerNormParams, Linear};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    /// `L_m × d_m`.
    pub slots: ParamId,
    pub query_proj: Linear,
    pub norm: LayerNormParams,
    pub slot_count: usize,
    pub width: usize,
}

impl MemoryBank {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, slot_count: usize, width: usize, rng: &mut R) -> Self {
        let slots = store.add_uniform(&format!("{prefix}.slots"), slot_count, width, width, rng);
        let query_proj = Linear::init(store, &format!("{prefix}.query"), width, width, true, rng);
        let norm = LayerNormParams::init(store, &format!("{prefix}.norm"), width);
        Self { slots, query_proj, norm, slot_count, width }
    }
}

/// Retrieval result: `weights` is `(T·N) × L_m`, `retrieved` is `(T·N) × d_m`.
#[derive(Clone, Copy, Debug)]
pub struct MemoryRead {
    pub weights: Var,
    pub retrieved: Var,
}

pub fn query_memory(tape: &mut Tape, bank: &MemoryBank, h: Var) -> Result<MemoryRead> {
    let cols = tape.value(h).cols;
    if cols != bank.width {
        return Err(Error::Shape(format!("memory width {} but input has {cols} columns", bank.width)));
    }
    let q = bank.query_proj.forward(tape, h);
    let slots = tape.param(bank.slots);
    let scores = tape.matmul_t(q, slots);
    let weights = tape.softmax_rows(scores);
    let retrieved = tape.matmul(weights, slots);
    Ok(MemoryRead { weights, retrieved })
}

/// `LN(h + retrieved)`.
pub fn memory_augment(tape: &mut Tape, bank: &MemoryBank, h: Var) -> Result<Var> {
    let read = query_memory(tape, bank, h)?;
    let sum = tape.add(h, read.retrieved);
    Ok(bank.norm.forward(tape, sum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{param_grad_error, rand_matrix, weighted_sum};
    use crate::tensor::{matmul, Matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(store: &mut ParamStore, slots: usize, width: usize) -> MemoryBank {
        MemoryBank::init(store, "mem.intr", slots, width, &mut ChaCha8Rng::seed_from_u64(2))
    }

    #[test]
    fn weights_are_convex_and_retrieval_is_exact_product() {
        let mut store = ParamStore::new();
        let b = bank(&mut store, 16, 72);
        let mut tape = Tape::new(&store);
        let h = tape.constant(rand_matrix(12, 72, 3));
        let read = query_memory(&mut tape, &b, h).unwrap();
        let w = tape.value(read.weights);
        for r in 0..w.rows {
            assert!(w.row(r).iter().all(|&v| v >= 0.0));
            assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(tape.value(read.retrieved), &matmul(w, store.get(b.slots)));
    }

    #[test]
    fn single_slot_is_returned_everywhere() {
        let mut store = ParamStore::new();
        let b = bank(&mut store, 1, 8);
        let mut tape = Tape::new(&store);
        let h = tape.constant(rand_matrix(5, 8, 4));
        let read = query_memory(&mut tape, &b, h).unwrap();
        for r in 0..5 {
            assert_eq!(tape.value(read.retrieved).row(r), store.get(b.slots).row(0));
        }
    }

    #[test]
    fn saturated_query_picks_its_slot() {
        let mut store = ParamStore::new();
        let b = bank(&mut store, 2, 2);
        *store.get_mut(b.slots) = Matrix::from_vec(2, 2, alloc::vec![1.0, 0.0, 0.0, 1.0]);
        *store.get_mut(b.query_proj.weight) = Matrix::from_vec(2, 2, alloc::vec![1.0, 0.0, 0.0, 1.0]);
        *store.get_mut(b.query_proj.bias.unwrap()) = Matrix::zeros(1, 2);
        let mut tape = Tape::new(&store);
        let h = tape.constant(Matrix::from_vec(1, 2, alloc::vec![100.0, 0.0]));
        let read = query_memory(&mut tape, &b, h).unwrap();
        let r = tape.value(read.retrieved);
        assert!((r.data[0] - 1.0).abs() < 1e-8 && r.data[1].abs() < 1e-8);
    }

    #[test]
    fn zero_slots_reduce_to_layer_norm() {
        let mut store = ParamStore::new();
        let b = bank(&mut store, 4, 8);
        *store.get_mut(b.slots) = Matrix::zeros(4, 8);
        let x = rand_matrix(6, 8, 5);
        let mut tape = Tape::new(&store);
        let h = tape.constant(x);
        let out = memory_augment(&mut tape, &b, h).unwrap();
        let direct = b.norm.forward(&mut tape, h);
        assert_eq!(tape.value(out), tape.value(direct));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        let b = bank(&mut store, 4, 8);
        let mut tape = Tape::new(&store);
        let h = tape.constant(Matrix::zeros(3, 7));
        assert!(matches!(query_memory(&mut tape, &b, h), Err(Error::Shape(_))));
    }

    #[test]
    fn gradients_reach_input_and_slots() {
        let mut store = ParamStore::new();
        let b = bank(&mut store, 3, 6);
        let x = rand_matrix(4, 6, 6);
        let ids: alloc::vec::Vec<_> = store.ids().collect();
        let err = param_grad_error(&store, &ids, |t| {
            let h = t.constant(x.clone());
            let y = memory_augment(t, &b, h).unwrap();
            weighted_sum(t, y)
        });
        assert!(err < 1e-6, "relative error {err}");

        let mut tape = Tape::new(&store);
        let h = tape.leaf(x);
        let y = memory_augment(&mut tape, &b, h).unwrap();
        let l = weighted_sum(&mut tape, y);
        let g = tape.backward(l);
        assert!(g.of(h).unwrap().data.iter().any(|&v| v != 0.0));
        assert!(g.params.get(b.slots).data.iter().any(|&v| v != 0.0));
    }
}

//! Helpers shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Matrix;

pub fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Scalar `Σ y ⊙ W` for a fixed random `W`.
pub fn weighted_sum(tape: &mut Tape, y: Var) -> Var {
    let (rows, cols) = (tape.value(y).rows, tape.value(y).cols);
    let w = tape.constant(rand_matrix(rows, cols, 99));
    let p = tape.mul(y, w);
    let ones = tape.constant(Matrix::filled(1, rows, 1.0));
    let col_sums = tape.matmul(ones, p);
    let as_column = tape.reshape(col_sums, cols, 1);
    let m = tape.mean_rows(as_column);
    tape.scale(m, cols as f64)
}

/// Worst relative error between analytic and central-difference gradients
/// over the listed parameters.
pub fn param_grad_error(store: &ParamStore, ids: &[ParamId], loss: impl Fn(&mut Tape) -> Var) -> f64 {
    let mut tape = Tape::new(store);
    let l = loss(&mut tape);
    let grads = tape.backward(l);
    let mut scratch = store.clone();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for &id in ids {
        let analytic = grads.params.get(id).clone();
        for k in 0..store.get(id).len() {
            let mut eval = |delta: f64| {
                scratch.get_mut(id).data[k] = store.get(id).data[k] + delta;
                let mut t = Tape::new(&scratch);
                let v = loss(&mut t);
                t.value(v).data[0]
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            scratch.get_mut(id).data[k] = store.get(id).data[k];
            let a = analytic.data[k];
            let err = libm::fabs(a - numeric) / libm::fabs(a).max(libm::fabs(numeric)).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

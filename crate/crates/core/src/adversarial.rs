//! Weather-condition discriminator behind a gradient reversal layer.

use alloc::format;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::datamodel::Condition;
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::params::ParamStore;

pub const DISCRIMINATOR_HIDDEN: usize = 64;
pub const CONDITION_CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub hidden: Linear,
    pub output: Linear,
    pub grl_lambda: f64,
}

impl DiscriminatorParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        hidden: usize,
        grl_lambda: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(grl_lambda >= 0.0 && grl_lambda.is_finite()) {
            return Err(Error::Config(format!("grl_lambda must be non-negative, got {grl_lambda}")));
        }
        Ok(Self {
            hidden: Linear::init(store, &format!("{prefix}.hidden"), width, hidden, true, rng),
            output: Linear::init(store, &format!("{prefix}.output"), hidden, CONDITION_CLASSES, true, rng),
            grl_lambda,
        })
    }
}

/// Classifier output: `loss` is the cross-entropy in nats, `logits` a `1×2` row.
#[derive(Clone, Copy, Debug)]
pub struct Discrimination {
    pub loss: Var,
    pub logits: Var,
}

/// Mean-pools `h_intr` over all positions after the reversal layer and
/// classifies the weather condition.
pub fn discriminate(tape: &mut Tape, p: &DiscriminatorParams, h_intr: Var, label: usize) -> Result<Discrimination> {
    let label = Condition::from_class(label)?.class();
    let reversed = tape.grl(h_intr, p.grl_lambda);
    let pooled = tape.mean_rows(reversed);
    let hidden = p.hidden.forward(tape, pooled);
    let hidden = tape.gelu(hidden);
    let logits = p.output.forward(tape, hidden);
    let loss = tape.cross_entropy(logits, label);
    Ok(Discrimination { loss, logits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;
    use crate::testutil::{param_grad_error, rand_matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(lambda: f64) -> (ParamStore, DiscriminatorParams) {
        let mut store = ParamStore::new();
        let p = DiscriminatorParams::init(&mut store, "disc", 6, 5, lambda, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (store, p)
    }

    #[test]
    fn uniform_logits_cost_ln2() {
        let (mut store, p) = setup(1.0);
        *store.get_mut(p.output.weight) = Matrix::zeros(5, 2);
        *store.get_mut(p.output.bias.unwrap()) = Matrix::zeros(1, 2);
        let mut tape = Tape::new(&store);
        let h = tape.constant(rand_matrix(8, 6, 2));
        let d = discriminate(&mut tape, &p, h, 1).unwrap();
        assert!((tape.value(d.loss).data[0] - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_logits_cost_nothing() {
        let (mut store, p) = setup(1.0);
        *store.get_mut(p.output.weight) = Matrix::zeros(5, 2);
        *store.get_mut(p.output.bias.unwrap()) = Matrix::from_vec(1, 2, alloc::vec![20.0, -20.0]);
        let mut tape = Tape::new(&store);
        let h = tape.constant(rand_matrix(8, 6, 2));
        let d = discriminate(&mut tape, &p, h, 0).unwrap();
        assert!(tape.value(d.loss).data[0] < 1e-8);
    }

    #[test]
    fn reversal_negates_upstream_gradient_only() {
        let x = rand_matrix(8, 6, 3);
        let grads = |lambda: f64| {
            let (store, p) = setup(lambda);
            let mut tape = Tape::new(&store);
            let h = tape.leaf(x.clone());
            let d = discriminate(&mut tape, &p, h, 1).unwrap();
            let g = tape.backward(d.loss);
            (g.of(h).unwrap().clone(), g.params.get(p.hidden.weight).clone())
        };
        let (reversed, own_rev) = grads(1.0);
        let (zero, own_zero) = grads(0.0);
        assert!(zero.data.iter().all(|&v| v == 0.0));
        assert_eq!(own_rev, own_zero);
        // unreversed reference: same graph without the reversal layer
        let (store, p) = setup(1.0);
        let mut tape = Tape::new(&store);
        let h = tape.leaf(x.clone());
        let pooled = tape.mean_rows(h);
        let hid = p.hidden.forward(&mut tape, pooled);
        let hid = tape.gelu(hid);
        let logits = p.output.forward(&mut tape, hid);
        let loss = tape.cross_entropy(logits, 1);
        let plain = tape.backward(loss).of(h).unwrap().clone();
        for (r, q) in reversed.data.iter().zip(&plain.data) {
            assert_eq!(*r, -q);
        }
    }

    #[test]
    fn classifier_gradients_match_finite_differences() {
        let (store, p) = setup(1.0);
        let x = rand_matrix(8, 6, 4);
        let ids: alloc::vec::Vec<_> = store.ids().collect();
        let err = param_grad_error(&store, &ids, |t| {
            let h = t.constant(x.clone());
            discriminate(t, &p, h, 1).unwrap().loss
        });
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn rejects_bad_label_and_lambda() {
        let (store, p) = setup(1.0);
        let mut tape = Tape::new(&store);
        let h = tape.constant(Matrix::zeros(2, 6));
        assert!(discriminate(&mut tape, &p, h, 2).is_err());
        let mut s = ParamStore::new();
        assert!(DiscriminatorParams::init(&mut s, "disc", 6, 5, -1.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}

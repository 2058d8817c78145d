//! Parameter handles for the basic layers and the forward-pass mode.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Matrix;

/// Affine map `x·W + b`, `W` stored `in × out`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let weight = store.add_uniform(&format!("{name}.weight"), d_in, d_out, d_in, rng);
        let bias = bias.then(|| store.add_uniform(&format!("{name}.bias"), 1, d_out, d_in, rng));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn init(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gain = store.add(&format!("{name}.gain"), Matrix::filled(1, width, 1.0));
        let bias = store.add(&format!("{name}.bias"), Matrix::zeros(1, width));
        Self { gain, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Forward-pass settings. Dropout is active only when an RNG is supplied.
pub struct Mode<'r> {
    pub dropout: f64,
    pub rng: Option<&'r mut dyn RngCore>,
    /// Record head- and block-averaged attention maps.
    pub collect_attention: bool,
}

impl<'r> Mode<'r> {
    pub fn eval() -> Self {
        Self { dropout: 0.0, rng: None, collect_attention: false }
    }

    pub fn eval_with_attention() -> Self {
        Self { dropout: 0.0, rng: None, collect_attention: true }
    }

    pub fn train(dropout: f64, rng: &'r mut dyn RngCore) -> Self {
        Self { dropout, rng: Some(rng), collect_attention: false }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some() && self.dropout > 0.0
    }

    /// Inverted-dropout multipliers, or `None` outside training.
    pub fn dropout_mask(&mut self, len: usize) -> Option<Vec<f64>> {
        let p = self.dropout;
        if p <= 0.0 {
            return None;
        }
        let rng = self.rng.as_mut()?;
        let keep = 1.0 / (1.0 - p);
        Some((0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
    }

    pub fn dropout(&mut self, tape: &mut Tape, x: Var) -> Var {
        match self.dropout_mask(tape.value(x).len()) {
            Some(mask) => tape.mul_const(x, mask),
            None => x,
        }
    }
}

pub(crate) fn check_finite(tape: &Tape, v: Var, stage: &'static str, block: usize) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { stage, block })
    }
}

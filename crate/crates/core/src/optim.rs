//! AdamW with decoupled weight decay and a one-cycle learning-rate schedule.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros = || store.iter().map(|(_, p)| Matrix::zeros(p.rows, p.cols)).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (k, p) in store.values_mut().enumerate() {
            let g = &grads.grads[k];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m.data[j] = self.beta1 * m.data[j] + (1.0 - self.beta1) * gj;
                v.data[j] = self.beta2 * v.data[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m.data[j] / c1;
                let v_hat = v.data[j] / c2;
                p.data[j] -= lr * (m_hat / (libm::sqrt(v_hat) + self.eps) + self.weight_decay * p.data[j]);
            }
        }
    }
}

/// Cosine warm-up from `peak/div` to `peak`, then cosine annealing down to
/// `peak/final_div`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycle {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub div: f64,
    pub final_div: f64,
}

impl OneCycle {
    pub fn new(peak: f64, total_steps: usize) -> Result<Self> {
        if !(peak > 0.0 && peak.is_finite()) || total_steps == 0 {
            return Err(Error::Config("one-cycle needs a positive peak and at least one step".into()));
        }
        Ok(Self { peak, total_steps, warmup_frac: 0.3, div: 25.0, final_div: 25.0 })
    }

    fn warmup_steps(&self) -> f64 {
        (self.warmup_frac * self.total_steps as f64).max(1.0)
    }

    /// Index of the step at which the peak is reached.
    pub fn peak_step(&self) -> usize {
        libm::round(self.warmup_steps()) as usize
    }

    pub fn lr(&self, step: usize) -> f64 {
        let start = self.peak / self.div;
        let end = self.peak / self.final_div;
        let step = step as f64;
        let warm = self.warmup_steps();
        let cos_interp = |from: f64, to: f64, frac: f64| to + (from - to) * (1.0 + libm::cos(PI * frac.clamp(0.0, 1.0))) / 2.0;
        if step <= warm {
            cos_interp(start, self.peak, step / warm)
        } else {
            let rest = (self.total_steps as f64 - warm).max(1.0);
            cos_interp(self.peak, end, (step - warm) / rest)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamId;

    #[test]
    fn schedule_rises_to_peak_then_anneals() {
        let s = OneCycle::new(1e-3, 100).unwrap();
        assert_eq!(s.peak_step(), 30);
        assert!((s.lr(0) - 4e-5).abs() < 1e-15);
        assert!((s.lr(30) - 1e-3).abs() < 1e-15);
        assert!((s.lr(100) - 4e-5).abs() < 1e-15);
        for k in 0..30 {
            assert!(s.lr(k + 1) > s.lr(k));
        }
        for k in 30..100 {
            assert!(s.lr(k + 1) < s.lr(k));
        }
        assert!(OneCycle::new(0.0, 10).is_err());
    }

    #[test]
    fn first_adam_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::from_vec(1, 3, alloc::vec![1.0, -2.0, 0.5]));
        let mut grads = ParamGrads::zeros_like(&store);
        grads.grads[0] = Matrix::from_vec(1, 3, alloc::vec![0.3, -5.0, 0.0]);
        let mut opt = AdamW::new(&store, 0.0);
        opt.step(&mut store, &grads, 0.01);
        let w = store.get(id);
        assert!((w.data[0] - 0.99).abs() < 1e-9);
        assert!((w.data[1] + 1.99).abs() < 1e-9);
        assert_eq!(w.data[2], 0.5);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut store = ParamStore::new();
        let id: ParamId = store.add("w", Matrix::from_vec(1, 1, alloc::vec![2.0]));
        let grads = ParamGrads::zeros_like(&store);
        let mut opt = AdamW::new(&store, 0.5);
        opt.step(&mut store, &grads, 0.1);
        assert!((store.get(id).data[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }
}

//! Gated fusion of the two branches, the prediction head and the objective.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::params::ParamStore;

pub const PREDICTOR_HIDDEN: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub gate: Linear,
}

impl GateParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut R) -> Self {
        Self { gate: Linear::init(store, &format!("{prefix}.linear"), 2 * width, width, true, rng) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictorShape {
    pub steps: usize,
    pub parcels: usize,
    pub width: usize,
    pub horizon: usize,
    pub outputs: usize,
}

/// Parcel-shared two-layer head over the flattened `T × d_h` history.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams {
    pub shape: PredictorShape,
    pub hidden: Linear,
    pub output: Linear,
}

impl PredictorParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        shape: PredictorShape,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let d_in = shape.steps * shape.width;
        let d_out = shape.horizon * shape.outputs;
        Self {
            shape,
            hidden: Linear::init(store, &format!("{prefix}.hidden"), d_in, hidden, true, rng),
            output: Linear::init(store, &format!("{prefix}.output"), hidden, d_out, true, rng),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Fused {
    pub h_fuse: Var,
    pub alpha: Var,
}

/// `α = σ(gate([h_intr | h_weat]))`, `h_fuse = α⊙h_intr + (1−α)⊙h_weat`.
pub fn adaptive_fuse(tape: &mut Tape, p: &GateParams, h_intr: Var, h_weat: Var) -> Result<Fused> {
    let (a, b) = (tape.value(h_intr), tape.value(h_weat));
    if !a.same_shape(b) {
        return Err(Error::Shape(format!("fusion inputs {}x{} and {}x{}", a.rows, a.cols, b.rows, b.cols)));
    }
    let both = tape.concat_cols(&[h_intr, h_weat]);
    let logits = p.gate.forward(tape, both);
    let alpha = tape.sigmoid(logits);
    // α⊙(h_intr − h_weat) + h_weat
    let diff = tape.sub(h_intr, h_weat);
    let gated = tape.mul(alpha, diff);
    let h_fuse = tape.add(gated, h_weat);
    Ok(Fused { h_fuse, alpha })
}

/// Maps `(T·N) × d_h` (rows `t·N + i`) to `N × (T'·d_f)`, column `t'·d_f + f`.
pub fn predict(tape: &mut Tape, p: &PredictorParams, h_fuse: Var) -> Result<Var> {
    let PredictorShape { steps, parcels, width, .. } = p.shape;
    let hm = tape.value(h_fuse);
    if hm.rows != steps * parcels || hm.cols != width {
        return Err(Error::Shape(format!("predictor expects {}x{width}, got {}x{}", steps * parcels, hm.rows, hm.cols)));
    }
    let order: Vec<usize> = (0..parcels).flat_map(|i| (0..steps).map(move |t| t * parcels + i)).collect();
    let by_parcel = tape.gather_rows(h_fuse, order);
    let flat = tape.reshape(by_parcel, parcels, steps * width);
    let hidden = p.hidden.forward(tape, flat);
    let hidden = tape.gelu(hidden);
    Ok(p.output.forward(tape, hidden))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    /// MAE in flow units.
    pub loss_pre: f64,
    /// Cross-entropy in nats.
    pub loss_dis: f64,
    pub total: f64,
    pub eta: f64,
}

impl LossReport {
    pub fn new(loss_pre: f64, loss_dis: f64, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("eta must be non-negative, got {eta}")));
        }
        if !loss_pre.is_finite() || !loss_dis.is_finite() {
            return Err(Error::Validation { index: "loss".into(), reason: "non-finite loss term".into() });
        }
        let total = if eta == 0.0 { loss_pre } else { loss_pre + eta * loss_dis };
        Ok(Self { loss_pre, loss_dis, total, eta })
    }
}

/// Builds `total = MAE(ŷ, y) + η·loss_dis` on the tape. A missing
/// discriminator term counts as zero.
pub fn compute_loss(tape: &mut Tape, pred: Var, target: &[f64], loss_dis: Option<Var>, eta: f64) -> Result<(Var, LossReport)> {
    let pm = tape.value(pred);
    if pm.len() != target.len() {
        return Err(Error::Shape(format!("prediction has {} values, target {}", pm.len(), target.len())));
    }
    if !pm.is_finite() || target.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation { index: "loss".into(), reason: "NaN or infinite prediction or target".into() });
    }
    let mae = tape.mae(pred, target.to_vec());
    let dis_value = loss_dis.map_or(0.0, |d| tape.value(d).data[0]);
    let report = LossReport::new(tape.value(mae).data[0], dis_value, eta)?;
    let total = match loss_dis {
        Some(d) if eta != 0.0 => {
            let weighted = tape.scale(d, eta);
            tape.add(mae, weighted)
        }
        _ => mae,
    };
    Ok((total, report))
}

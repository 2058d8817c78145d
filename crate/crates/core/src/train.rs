//! Mini-batch training with early stopping, and evaluation.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::SampleWindow;
use crate::error::{Error, Result};
use crate::metrics::ConditionStats;
use crate::model::{ModelConfig, ModelInput, Normalizer, Variant, WedNet};
use crate::optim::{AdamW, OneCycle};
use crate::params::ParamGrads;

const SHUFFLE_STREAM: u64 = 100;
const DROPOUT_STREAM: u64 = 101;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub eta: f64,
    pub patience: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr: 1e-3,
            weight_decay: 5e-4,
            epochs: 30,
            eta: 0.1,
            patience: 10,
            seed: 0,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) || !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config("weight_decay and eta must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_pre: f64,
    pub loss_dis: f64,
    pub total: f64,
    pub valid_mae: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation MAE.
    pub model: WedNet,
    pub best_epoch: usize,
    pub best_valid_mae: f64,
    pub epochs: Vec<EpochLog>,
    /// Learning rate used at every optimizer step.
    pub lr_trace: Vec<f64>,
    /// Set when a non-finite loss stopped training early.
    pub diverged_at: Option<usize>,
}

pub fn prepare_all(model: &WedNet, windows: &[SampleWindow]) -> Result<Vec<ModelInput>> {
    windows.iter().map(|w| model.prepare(w)).collect()
}

/// Mean absolute error over every predicted entry, flow units.
pub fn validation_mae(model: &WedNet, inputs: &[ModelInput]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for input in inputs {
        let pred = model.predict_window(input)?;
        let truth = model.to_window_layout(&input.target);
        sum += pred.iter().zip(&truth).map(|(p, t)| libm::fabs(p - t)).sum::<f64>();
        count += pred.len();
    }
    Ok(sum / count as f64)
}

/// Trains a fresh model. `normalizer` should come from the original
/// (unaugmented) training split so variants and datasets share a scale.
pub fn train(
    model_config: &ModelConfig,
    config: &TrainConfig,
    normalizer: Normalizer,
    train_set: &[SampleWindow],
    valid_set: &[SampleWindow],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::TooFewWindows { needed: 1, got: 0 });
    }
    let mc = model_config.clone().with_variant(config.variant);
    let mut model = WedNet::new(mc, normalizer, config.seed)?;
    let train_inputs = prepare_all(&model, train_set)?;
    let valid_inputs = prepare_all(&model, valid_set)?;

    let steps_per_epoch = train_inputs.len().div_ceil(config.batch_size);
    let schedule = OneCycle::new(config.lr, steps_per_epoch * config.epochs)?;
    let mut opt = AdamW::new(&model.store, config.weight_decay);
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle.set_stream(SHUFFLE_STREAM);
    let mut dropout = ChaCha8Rng::seed_from_u64(config.seed);
    dropout.set_stream(DROPOUT_STREAM);

    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    let mut best = (f64::INFINITY, 0usize, model.store.clone());
    let mut epochs = Vec::new();
    let mut lr_trace = Vec::new();
    let mut diverged_at = None;
    let mut since_best = 0;

    'outer: for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let (mut pre, mut dis, mut tot) = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let mut grads = ParamGrads::zeros_like(&model.store);
            for &k in batch {
                let outcome = model.sample_gradients(&train_inputs[k], config.eta, Some(&mut dropout));
                let (report, g) = match outcome {
                    Ok(v) if v.0.total.is_finite() => v,
                    Ok(_) | Err(Error::NonFinite { .. }) => {
                        diverged_at = Some(epoch);
                        break 'outer;
                    }
                    Err(e) => return Err(e),
                };
                grads.accumulate(&g);
                pre += report.loss_pre;
                dis += report.loss_dis;
                tot += report.total;
            }
            grads.scale(1.0 / batch.len() as f64);
            let lr = schedule.lr(lr_trace.len());
            lr_trace.push(lr);
            opt.step(&mut model.store, &grads, lr);
        }
        let n = train_inputs.len() as f64;
        let valid_mae = validation_mae(&model, &valid_inputs)?;
        let log = EpochLog {
            epoch,
            loss_pre: pre / n,
            loss_dis: dis / n,
            total: tot / n,
            valid_mae,
            lr: *lr_trace.last().unwrap_or(&0.0),
        };
        on_epoch(&log);
        epochs.push(log);
        if !valid_mae.is_finite() {
            diverged_at = Some(epoch);
            break;
        }
        if valid_mae < best.0 {
            best = (valid_mae, epoch, model.store.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (best_valid_mae, best_epoch, store) = best;
    model.store = store;
    Ok(TrainOutcome { model, best_epoch, best_valid_mae, epochs, lr_trace, diverged_at })
}

/// Per-condition errors of the model on `windows`.
pub fn evaluate(model: &WedNet, windows: &[SampleWindow]) -> Result<ConditionStats> {
    let mut stats = ConditionStats::default();
    for w in windows {
        let input = model.prepare(w)?;
        stats.add(w, &model.predict_window(&input)?);
    }
    Ok(stats)
}

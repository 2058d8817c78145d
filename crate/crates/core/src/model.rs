//! The dual-branch forecaster and its ablation variants.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversarial::{discriminate, Discrimination, DiscriminatorParams, DISCRIMINATOR_HIDDEN};
use crate::autograd::{Tape, Var};
use crate::datamodel::SampleWindow;
use crate::embed::{embed, EmbeddingDims, EmbeddingParams};
use crate::encoders::{i_stenc, w_stenc, AttentionBundle, EncoderBlock};
use crate::error::{Error, Result};
use crate::fusion::{adaptive_fuse, compute_loss, predict, GateParams, LossReport, PredictorParams, PredictorShape, PREDICTOR_HIDDEN};
use crate::layers::{Linear, Mode};
use crate::memory::{memory_augment, MemoryBank};
use crate::params::{ParamGrads, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Full,
    NoWeather,
    SelfAttnWeather,
    NoMemory,
    NoDiscriminator,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Full, Variant::NoWeather, Variant::SelfAttnWeather, Variant::NoMemory, Variant::NoDiscriminator];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoWeather => "no_weather",
            Variant::SelfAttnWeather => "self_attn_weather",
            Variant::NoMemory => "no_memory",
            Variant::NoDiscriminator => "no_discriminator",
        }
    }

    pub fn uses_weather(self) -> bool {
        self != Variant::NoWeather
    }

    pub fn uses_memory(self) -> bool {
        self != Variant::NoMemory
    }

    pub fn uses_discriminator(self) -> bool {
        self != Variant::NoDiscriminator
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub steps: usize,
    pub parcels: usize,
    pub horizon: usize,
    pub flow_dim: usize,
    pub weather_dim: usize,
    pub feature: usize,
    pub adaptive: usize,
    pub time_of_day: usize,
    pub day_of_week: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_mult: usize,
    pub memory_slots: usize,
    pub predictor_hidden: usize,
    pub discriminator_hidden: usize,
    pub dropout: f64,
    pub grl_lambda: f64,
    pub variant: Variant,
}

impl ModelConfig {
    /// Full-size configuration: `d_h = 72`, 4 blocks of 4 heads.
    pub fn standard(steps: usize, parcels: usize, horizon: usize) -> Self {
        Self {
            steps,
            parcels,
            horizon,
            flow_dim: 2,
            weather_dim: 3,
            feature: 12,
            adaptive: 18,
            time_of_day: 12,
            day_of_week: 12,
            heads: 4,
            blocks: 4,
            ffn_mult: 4,
            memory_slots: 16,
            predictor_hidden: PREDICTOR_HIDDEN,
            discriminator_hidden: DISCRIMINATOR_HIDDEN,
            dropout: 0.1,
            grl_lambda: 1.0,
            variant: Variant::Full,
        }
    }

    /// Narrow single-block model sized for a CPU.
    pub fn compact(steps: usize, parcels: usize, horizon: usize) -> Self {
        Self {
            feature: 8,
            adaptive: 4,
            time_of_day: 4,
            day_of_week: 4,
            heads: 2,
            blocks: 1,
            ffn_mult: 2,
            memory_slots: 8,
            predictor_hidden: 64,
            discriminator_hidden: 16,
            ..Self::standard(steps, parcels, horizon)
        }
    }

    /// `T=3, N=4, d_h=8`, one block, one head, two memory slots.
    pub fn reduced() -> Self {
        Self {
            feature: 2,
            adaptive: 2,
            time_of_day: 1,
            day_of_week: 1,
            heads: 1,
            blocks: 1,
            ffn_mult: 2,
            memory_slots: 2,
            predictor_hidden: 6,
            discriminator_hidden: 5,
            dropout: 0.0,
            ..Self::standard(3, 4, 2)
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn hidden(&self) -> usize {
        self.feature + 2 * self.adaptive + self.time_of_day + self.day_of_week
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("steps", self.steps),
            ("parcels", self.parcels),
            ("horizon", self.horizon),
            ("flow_dim", self.flow_dim),
            ("weather_dim", self.weather_dim),
            ("feature", self.feature),
            ("heads", self.heads),
            ("blocks", self.blocks),
            ("ffn_mult", self.ffn_mult),
            ("memory_slots", self.memory_slots),
            ("predictor_hidden", self.predictor_hidden),
            ("discriminator_hidden", self.discriminator_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.hidden() % self.heads != 0 {
            return Err(Error::Config(format!("hidden width {} is not divisible by {} heads", self.hidden(), self.heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.grl_lambda >= 0.0 && self.grl_lambda.is_finite()) {
            return Err(Error::Config("grl_lambda must be non-negative".into()));
        }
        Ok(())
    }

    fn embedding_dims(&self, input: usize) -> EmbeddingDims {
        EmbeddingDims {
            input,
            feature: self.feature,
            adaptive: self.adaptive,
            time_of_day: self.time_of_day,
            day_of_week: self.day_of_week,
            steps: self.steps,
            parcels: self.parcels,
        }
    }
}

/// Flow z-scores and weather min-max ranges fitted on training windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub flow_mean: Vec<f64>,
    pub flow_std: Vec<f64>,
    pub weather_min: Vec<f64>,
    pub weather_max: Vec<f64>,
}

impl Normalizer {
    pub fn identity(flow_dim: usize, weather_dim: usize) -> Self {
        Self {
            flow_mean: vec![0.0; flow_dim],
            flow_std: vec![1.0; flow_dim],
            weather_min: vec![0.0; weather_dim],
            weather_max: vec![1.0; weather_dim],
        }
    }

    pub fn fit(windows: &[SampleWindow]) -> Result<Self> {
        let first = windows.first().ok_or(Error::TooFewWindows { needed: 1, got: 0 })?;
        let (df, dw) = (first.d_flow, first.d_weather);
        let mut sum = vec![0.0; df];
        let mut sq = vec![0.0; df];
        let mut count = 0usize;
        let mut lo = vec![f64::INFINITY; dw];
        let mut hi = vec![f64::NEG_INFINITY; dw];
        for w in windows {
            if w.d_flow != df || w.d_weather != dw {
                return Err(Error::Shape("windows disagree on feature widths".into()));
            }
            for row in w.flow_hist.chunks_exact(df) {
                for (f, &v) in row.iter().enumerate() {
                    sum[f] += v;
                    sq[f] += v * v;
                }
                count += 1;
            }
            for row in w.weather_hist.chunks_exact(dw) {
                for (a, &v) in row.iter().enumerate() {
                    lo[a] = lo[a].min(v);
                    hi[a] = hi[a].max(v);
                }
            }
        }
        let n = count as f64;
        let flow_mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let flow_std = sq
            .iter()
            .zip(&flow_mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var > 1e-12 {
                    libm::sqrt(var)
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { flow_mean, flow_std, weather_min: lo, weather_max: hi })
    }

    fn weather_scale(&self, a: usize) -> f64 {
        let range = self.weather_max[a] - self.weather_min[a];
        if range > 1e-12 {
            range
        } else {
            1.0
        }
    }

    pub fn flow(&self, values: &[f64]) -> Vec<f64> {
        let d = self.flow_mean.len();
        values.iter().enumerate().map(|(k, v)| (v - self.flow_mean[k % d]) / self.flow_std[k % d]).collect()
    }

    pub fn weather(&self, values: &[f64]) -> Vec<f64> {
        let d = self.weather_min.len();
        values.iter().enumerate().map(|(k, v)| (v - self.weather_min[k % d]) / self.weather_scale(k % d)).collect()
    }
}

/// One window prepared for the network. The target is in predictor layout:
/// row `i`, column `t'·d_f + f`, in flow units.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub flow: crate::tensor::Matrix,
    pub weather: crate::tensor::Matrix,
    pub time_of_day: Vec<u8>,
    pub day_of_week: Vec<u8>,
    pub target: Vec<f64>,
    pub label: usize,
}

impl ModelInput {
    pub fn from_window(w: &SampleWindow, norm: &Normalizer) -> Result<Self> {
        let (t, n, df, dw) = (w.history_len(), w.n_parcels, w.d_flow, w.d_weather);
        if norm.flow_mean.len() != df || norm.weather_min.len() != dw {
            return Err(Error::Shape("normalizer widths differ from the window".into()));
        }
        if w.flow_hist.len() != t * n * df || w.weather_hist.len() != t * n * dw {
            return Err(Error::Shape(format!("window {} history length", w.id)));
        }
        let horizon = w.horizon();
        let mut target = vec![0.0; w.flow_future.len()];
        for s in 0..horizon {
            for i in 0..n {
                for f in 0..df {
                    target[i * horizon * df + s * df + f] = w.flow_future[(s * n + i) * df + f];
                }
            }
        }
        Ok(Self {
            flow: crate::tensor::Matrix::from_vec(t * n, df, norm.flow(&w.flow_hist)),
            weather: crate::tensor::Matrix::from_vec(t * n, dw, norm.weather(&w.weather_hist)),
            time_of_day: w.time_of_day.clone(),
            day_of_week: w.day_of_week.clone(),
            target,
            label: w.condition.value.class(),
        })
    }
}

/// RNG stream ids per component, so variants that share a component also
/// share its initial values.
mod stream {
    pub const EMBED_FLOW: u64 = 1;
    pub const EMBED_WEATHER: u64 = 2;
    pub const ISTENC: u64 = 3;
    pub const WSTENC: u64 = 4;
    pub const CONCAT: u64 = 5;
    pub const MEM_INTR: u64 = 6;
    pub const MEM_WEAT: u64 = 7;
    pub const DISC: u64 = 8;
    pub const GATE: u64 = 9;
    pub const PRED: u64 = 10;
}

#[derive(Clone, Debug, PartialEq)]
pub struct WedNet {
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub store: ParamStore,
    embed_flow: EmbeddingParams,
    embed_weather: Option<EmbeddingParams>,
    istenc: Vec<EncoderBlock>,
    wstenc: Vec<EncoderBlock>,
    concat_proj: Option<Linear>,
    mem_intr: Option<MemoryBank>,
    mem_weat: Option<MemoryBank>,
    disc: Option<DiscriminatorParams>,
    gate: Option<GateParams>,
    pred: PredictorParams,
}

/// Forward result. `pred` is in predictor layout and flow units.
pub struct Forward {
    pub pred: Var,
    pub h_intr: Var,
    pub h_weat: Option<Var>,
    pub alpha: Option<Var>,
    pub disc: Option<Discrimination>,
    pub bundle: Option<AttentionBundle>,
}

impl WedNet {
    pub fn new(config: ModelConfig, normalizer: Normalizer, seed: u64) -> Result<Self> {
        config.validate()?;
        if normalizer.flow_mean.len() != config.flow_dim || normalizer.weather_min.len() != config.weather_dim {
            return Err(Error::Config("normalizer widths differ from the model configuration".into()));
        }
        let rng = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        let d = config.hidden();
        let v = config.variant;
        let mut store = ParamStore::new();
        let embed_flow =
            EmbeddingParams::init(&mut store, "embed.flow", config.embedding_dims(config.flow_dim), &mut rng(stream::EMBED_FLOW));
        let embed_weather = v.uses_weather().then(|| {
            let dims = config.embedding_dims(config.weather_dim);
            EmbeddingParams::init(&mut store, "embed.weather", dims, &mut rng(stream::EMBED_WEATHER))
        });
        let blocks = |store: &mut ParamStore, prefix: &str, r: &mut ChaCha8Rng| -> Vec<EncoderBlock> {
            (0..config.blocks)
                .map(|k| EncoderBlock::init(store, &format!("{prefix}.block{k}"), d, config.heads, config.ffn_mult, r))
                .collect()
        };
        let istenc = blocks(&mut store, "istenc", &mut rng(stream::ISTENC));
        let wstenc = if v.uses_weather() { blocks(&mut store, "wstenc", &mut rng(stream::WSTENC)) } else { Vec::new() };
        let concat_proj = (v == Variant::SelfAttnWeather)
            .then(|| Linear::init(&mut store, "wstenc.concat", 2 * d, d, true, &mut rng(stream::CONCAT)));
        let mem_intr = v
            .uses_memory()
            .then(|| MemoryBank::init(&mut store, "mem.intr", config.memory_slots, d, &mut rng(stream::MEM_INTR)));
        let mem_weat = (v.uses_memory() && v.uses_weather())
            .then(|| MemoryBank::init(&mut store, "mem.weat", config.memory_slots, d, &mut rng(stream::MEM_WEAT)));
        let disc = if v.uses_discriminator() {
            let mut r = rng(stream::DISC);
            Some(DiscriminatorParams::init(&mut store, "disc", d, config.discriminator_hidden, config.grl_lambda, &mut r)?)
        } else {
            None
        };
        let gate = v.uses_weather().then(|| GateParams::init(&mut store, "gate", d, &mut rng(stream::GATE)));
        let shape = PredictorShape {
            steps: config.steps,
            parcels: config.parcels,
            width: d,
            horizon: config.horizon,
            outputs: config.flow_dim,
        };
        let pred = PredictorParams::init(&mut store, "pred", shape, config.predictor_hidden, &mut rng(stream::PRED));
        Ok(Self {
            config,
            normalizer,
            store,
            embed_flow,
            embed_weather,
            istenc,
            wstenc,
            concat_proj,
            mem_intr,
            mem_weat,
            disc,
            gate,
            pred,
        })
    }

    /// Rebuilds a model around stored parameters. Every expected name must be
    /// present with the expected shape and no extra names are allowed.
    pub fn from_parts(config: ModelConfig, normalizer: Normalizer, params: &[(String, crate::tensor::Matrix)]) -> Result<Self> {
        let mut model = Self::new(config, normalizer, 0)?;
        if params.len() != model.store.len() {
            return Err(Error::CheckpointMismatch(format!(
                "expected {} tensors, found {}",
                model.store.len(),
                params.len()
            )));
        }
        for (name, value) in params {
            let id = model
                .store
                .id(name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("unexpected tensor {name}")))?;
            let slot = model.store.get_mut(id);
            if slot.rows != value.rows || slot.cols != value.cols {
                return Err(Error::CheckpointMismatch(format!(
                    "{name} is {}x{}, expected {}x{}",
                    value.rows, value.cols, slot.rows, slot.cols
                )));
            }
            if !value.is_finite() {
                return Err(Error::CheckpointMismatch(format!("{name} holds non-finite values")));
            }
            *slot = value.clone();
        }
        Ok(model)
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn prepare(&self, window: &SampleWindow) -> Result<ModelInput> {
        let c = &self.config;
        if window.history_len() != c.steps || window.n_parcels != c.parcels || window.horizon() != c.horizon {
            return Err(Error::Shape(format!(
                "window {} is T={} N={} T'={}, model expects T={} N={} T'={}",
                window.id,
                window.history_len(),
                window.n_parcels,
                window.horizon(),
                c.steps,
                c.parcels,
                c.horizon
            )));
        }
        ModelInput::from_window(window, &self.normalizer)
    }

    /// Builds the forward graph on `tape`, which must read `self.store`.
    pub fn forward(&self, tape: &mut Tape, input: &ModelInput, mode: &mut Mode) -> Result<Forward> {
        let (t, n) = (self.config.steps, self.config.parcels);
        let collect = mode.collect_attention;
        let flow = tape.constant(input.flow.clone());
        let h_f = embed(tape, &self.embed_flow, flow, &input.time_of_day, &input.day_of_week)?;
        let intr = i_stenc(tape, &self.istenc, h_f, t, n, mode)?;
        let h_intr = intr.hidden;

        let mut cross = None;
        let h_weat = match &self.embed_weather {
            Some(ew) => {
                let weather = tape.constant(input.weather.clone());
                let h_w = embed(tape, ew, weather, &input.time_of_day, &input.day_of_week)?;
                let out = match &self.concat_proj {
                    Some(proj) => {
                        let both = tape.concat_cols(&[h_f, h_w]);
                        let mixed = proj.forward(tape, both);
                        i_stenc(tape, &self.wstenc, mixed, t, n, mode)?
                    }
                    None => {
                        let out = w_stenc(tape, &self.wstenc, h_f, h_w, t, n, mode)?;
                        cross = out.maps.clone();
                        out
                    }
                };
                Some(out.hidden)
            }
            None => None,
        };

        let disc = match &self.disc {
            Some(p) => Some(discriminate(tape, p, h_intr, input.label)?),
            None => None,
        };
        let intr_mem = match &self.mem_intr {
            Some(bank) => memory_augment(tape, bank, h_intr)?,
            None => h_intr,
        };
        let (fused, alpha) = match h_weat {
            Some(hw) => {
                let weat_mem = match &self.mem_weat {
                    Some(bank) => memory_augment(tape, bank, hw)?,
                    None => hw,
                };
                let gate = self.gate.as_ref().expect("weather variants carry a gate");
                let f = adaptive_fuse(tape, gate, intr_mem, weat_mem)?;
                (f.h_fuse, Some(f.alpha))
            }
            None => (intr_mem, None),
        };
        let raw = predict(tape, &self.pred, fused)?;
        let (scale, shift) = self.output_affine();
        let pred = tape.affine_cols(raw, scale, &shift);

        let bundle = if collect {
            let (st, ss) = intr.maps.expect("maps are collected in this mode");
            let (ct, cs) = cross.map_or((None, None), |(a, b)| (Some(a), Some(b)));
            Some(AttentionBundle { self_temporal: st, self_spatial: ss, cross_temporal: ct, cross_spatial: cs })
        } else {
            None
        };
        Ok(Forward { pred, h_intr, h_weat, alpha, disc, bundle })
    }

    fn output_affine(&self) -> (Vec<f64>, Vec<f64>) {
        let df = self.config.flow_dim;
        let cols = self.config.horizon * df;
        let scale = (0..cols).map(|c| self.normalizer.flow_std[c % df]).collect();
        let shift = (0..cols).map(|c| self.normalizer.flow_mean[c % df]).collect();
        (scale, shift)
    }

    /// Total training loss node and its report.
    pub fn loss(&self, tape: &mut Tape, input: &ModelInput, mode: &mut Mode, eta: f64) -> Result<(Var, LossReport, Forward)> {
        let fwd = self.forward(tape, input, mode)?;
        let (total, report) = compute_loss(tape, fwd.pred, &input.target, fwd.disc.map(|d| d.loss), eta)?;
        Ok((total, report, fwd))
    }

    /// Loss and parameter gradients for one sample. Dropout is drawn from
    /// `rng` when given.
    pub fn sample_gradients(
        &self,
        input: &ModelInput,
        eta: f64,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(LossReport, ParamGrads)> {
        let mut mode = match rng {
            Some(r) => Mode::train(self.config.dropout, r),
            None => Mode::eval(),
        };
        let mut tape = Tape::new(&self.store);
        let (total, report, _) = self.loss(&mut tape, input, &mut mode, eta)?;
        let grads = tape.backward(total).params;
        if !grads.is_finite() {
            return Err(Error::NonFinite { stage: "gradient", block: 0 });
        }
        Ok((report, grads))
    }

    /// Prediction in window layout `(t'·N + i)·d_f + f`, flow units.
    pub fn predict_window(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let fwd = self.forward(&mut tape, input, &mut Mode::eval())?;
        Ok(self.to_window_layout(tape.value(fwd.pred).data.as_slice()))
    }

    pub fn to_window_layout(&self, pred: &[f64]) -> Vec<f64> {
        let (h, n, df) = (self.config.horizon, self.config.parcels, self.config.flow_dim);
        let mut out = vec![0.0; pred.len()];
        for s in 0..h {
            for i in 0..n {
                for f in 0..df {
                    out[(s * n + i) * df + f] = pred[i * h * df + s * df + f];
                }
            }
        }
        out
    }

    /// Head- and block-averaged attention maps from an eval-mode pass.
    pub fn extract_attention(&self, input: &ModelInput) -> Result<AttentionBundle> {
        let mut tape = Tape::new(&self.store);
        let fwd = self.forward(&mut tape, input, &mut Mode::eval_with_attention())?;
        Ok(fwd.bundle.expect("collected"))
    }

    /// Encoder representations pooled over positions, for visualization.
    pub fn pooled_representations(&self, input: &ModelInput) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let mut tape = Tape::new(&self.store);
        let fwd = self.forward(&mut tape, input, &mut Mode::eval())?;
        let pool = |tape: &mut Tape, v: Var| {
            let m = tape.mean_rows(v);
            tape.value(m).data.clone()
        };
        let intr = pool(&mut tape, fwd.h_intr);
        let weat = fwd.h_weat.map(|v| pool(&mut tape, v));
        Ok((intr, weat))
    }
}

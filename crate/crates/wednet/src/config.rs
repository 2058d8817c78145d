//! Plain `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so that typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};
use wednet_core::causalaug::AugmentParams;
use wednet_core::datamodel::DEFAULT_SPLIT;
use wednet_core::ingest::WindowSpec;
use wednet_core::model::{ModelConfig, Variant};
use wednet_core::synth::SynthConfig;
use wednet_core::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Compact,
    Standard,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub window: WindowSpec,
    pub split: [f64; 3],
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentParams,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let window = WindowSpec::default();
        Self {
            preset: Preset::Compact,
            window,
            split: DEFAULT_SPLIT,
            // parcels are filled in from the dataset
            model: ModelConfig::compact(window.history, 0, window.horizon),
            train: TrainConfig::default(),
            augment: AugmentParams::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", k + 1))?;
            if entries.insert(key.trim().to_string(), value.trim().to_string()).is_some() {
                bail!("line {}: duplicate key {}", k + 1, key.trim());
            }
        }
        let mut cfg = match entries.get("preset").map(String::as_str) {
            None | Some("compact") => RunConfig::default(),
            Some("standard") => {
                let mut c = RunConfig::default();
                c.preset = Preset::Standard;
                c.model = ModelConfig::standard(c.window.history, 0, c.window.horizon);
                c
            }
            Some(other) => bail!("preset: unknown value {other:?}"),
        };
        for (key, value) in &entries {
            if key != "preset" {
                cfg.set(key, value)?;
            }
        }
        cfg.model.steps = cfg.window.history;
        cfg.model.horizon = cfg.window.horizon;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "history" => self.window.history = parse(key, value)?,
            "horizon" => self.window.horizon = parse(key, value)?,
            "stride" => self.window.stride = parse(key, value)?,
            "split_train" => self.split[0] = parse(key, value)?,
            "split_valid" => self.split[1] = parse(key, value)?,
            "split_test" => self.split[2] = parse(key, value)?,
            "feature_dim" => m.feature = parse(key, value)?,
            "adaptive_dim" => m.adaptive = parse(key, value)?,
            "time_of_day_dim" => m.time_of_day = parse(key, value)?,
            "day_of_week_dim" => m.day_of_week = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "blocks" => m.blocks = parse(key, value)?,
            "ffn_mult" => m.ffn_mult = parse(key, value)?,
            "memory_slots" => m.memory_slots = parse(key, value)?,
            "predictor_hidden" => m.predictor_hidden = parse(key, value)?,
            "discriminator_hidden" => m.discriminator_hidden = parse(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "grl_lambda" => m.grl_lambda = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "eta" => t.eta = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "variant" => t.variant = value.parse::<Variant>()?,
            "aug_r" => self.augment.r = parse(key, value)?,
            "aug_ratio" => self.augment.ratio = parse(key, value)?,
            "aug_window" => self.augment.window = parse(key, value)?,
            "aug_seed" => self.augment.seed = parse(key, value)?,
            "synth_parcels" => s.n_parcels = parse(key, value)?,
            "synth_days" => s.n_days = parse(key, value)?,
            "synth_rain_rate" => s.rain_event_rate = parse(key, value)?,
            "synth_rain_min" => s.rain_intensity_range.0 = parse(key, value)?,
            "synth_rain_max" => s.rain_intensity_range.1 = parse(key, value)?,
            "synth_sensitivity_min" => s.suppression_strength.0 = parse(key, value)?,
            "synth_sensitivity_max" => s.suppression_strength.1 = parse(key, value)?,
            "synth_rain_memory" => s.rain_memory = parse(key, value)?,
            "synth_seed" => s.seed = parse(key, value)?,
            other => bail!("unknown configuration key {other:?}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let mut probe = self.model.clone();
        probe.parcels = probe.parcels.max(1);
        probe.validate()?;
        self.synth.validate()?;
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.split.iter().any(|&r| r <= 0.0) {
            bail!("split ratios must be positive and sum to 1");
        }
        Ok(())
    }

    /// Model configuration for a dataset with `parcels` parcels.
    pub fn model_for(&self, parcels: usize) -> ModelConfig {
        ModelConfig { parcels, steps: self.window.history, horizon: self.window.horizon, ..self.model.clone() }
    }

    /// Every effective setting as sorted `key = value` lines.
    pub fn canonical(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let s = &self.synth;
        let a = &self.augment;
        let preset = match self.preset {
            Preset::Compact => "compact",
            Preset::Standard => "standard",
        };
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("preset", preset.into());
        kv.insert("history", self.window.history.to_string());
        kv.insert("horizon", self.window.horizon.to_string());
        kv.insert("stride", self.window.stride.to_string());
        kv.insert("split_train", self.split[0].to_string());
        kv.insert("split_valid", self.split[1].to_string());
        kv.insert("split_test", self.split[2].to_string());
        kv.insert("feature_dim", m.feature.to_string());
        kv.insert("adaptive_dim", m.adaptive.to_string());
        kv.insert("time_of_day_dim", m.time_of_day.to_string());
        kv.insert("day_of_week_dim", m.day_of_week.to_string());
        kv.insert("heads", m.heads.to_string());
        kv.insert("blocks", m.blocks.to_string());
        kv.insert("ffn_mult", m.ffn_mult.to_string());
        kv.insert("memory_slots", m.memory_slots.to_string());
        kv.insert("predictor_hidden", m.predictor_hidden.to_string());
        kv.insert("discriminator_hidden", m.discriminator_hidden.to_string());
        kv.insert("dropout", m.dropout.to_string());
        kv.insert("grl_lambda", m.grl_lambda.to_string());
        kv.insert("batch_size", t.batch_size.to_string());
        kv.insert("lr", t.lr.to_string());
        kv.insert("weight_decay", t.weight_decay.to_string());
        kv.insert("epochs", t.epochs.to_string());
        kv.insert("eta", t.eta.to_string());
        kv.insert("patience", t.patience.to_string());
        kv.insert("seed", t.seed.to_string());
        kv.insert("variant", t.variant.to_string());
        kv.insert("aug_r", a.r.to_string());
        kv.insert("aug_ratio", a.ratio.to_string());
        kv.insert("aug_window", a.window.to_string());
        kv.insert("aug_seed", a.seed.to_string());
        kv.insert("synth_parcels", s.n_parcels.to_string());
        kv.insert("synth_days", s.n_days.to_string());
        kv.insert("synth_rain_rate", s.rain_event_rate.to_string());
        kv.insert("synth_rain_min", s.rain_intensity_range.0.to_string());
        kv.insert("synth_rain_max", s.rain_intensity_range.1.to_string());
        kv.insert("synth_sensitivity_min", s.suppression_strength.0.to_string());
        kv.insert("synth_sensitivity_max", s.suppression_strength.1.to_string());
        kv.insert("synth_rain_memory", s.rain_memory.to_string());
        kv.insert("synth_seed", s.seed.to_string());
        let mut out = String::new();
        for (k, v) in kv {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

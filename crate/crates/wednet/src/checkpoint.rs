//! Model checkpoints: named `f64` parameter blobs plus the configuration
//! needed to rebuild the network.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use wednet_core::model::{ModelConfig, Normalizer, Variant, WedNet};
use wednet_core::tensor::Matrix;

use crate::container::{bin_path, decode, encode, read_json_bin, write_json_bin, Dtype};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
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
    pub variant: String,
}

impl From<&ModelConfig> for ModelSpec {
    fn from(c: &ModelConfig) -> Self {
        Self {
            steps: c.steps,
            parcels: c.parcels,
            horizon: c.horizon,
            flow_dim: c.flow_dim,
            weather_dim: c.weather_dim,
            feature: c.feature,
            adaptive: c.adaptive,
            time_of_day: c.time_of_day,
            day_of_week: c.day_of_week,
            heads: c.heads,
            blocks: c.blocks,
            ffn_mult: c.ffn_mult,
            memory_slots: c.memory_slots,
            predictor_hidden: c.predictor_hidden,
            discriminator_hidden: c.discriminator_hidden,
            dropout: c.dropout,
            grl_lambda: c.grl_lambda,
            variant: c.variant.to_string(),
        }
    }
}

impl ModelSpec {
    pub fn to_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            steps: self.steps,
            parcels: self.parcels,
            horizon: self.horizon,
            flow_dim: self.flow_dim,
            weather_dim: self.weather_dim,
            feature: self.feature,
            adaptive: self.adaptive,
            time_of_day: self.time_of_day,
            day_of_week: self.day_of_week,
            heads: self.heads,
            blocks: self.blocks,
            ffn_mult: self.ffn_mult,
            memory_slots: self.memory_slots,
            predictor_hidden: self.predictor_hidden,
            discriminator_hidden: self.discriminator_hidden,
            dropout: self.dropout,
            grl_lambda: self.grl_lambda,
            variant: self.variant.parse::<Variant>()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizerSpec {
    pub flow_mean: Vec<f64>,
    pub flow_std: Vec<f64>,
    pub weather_min: Vec<f64>,
    pub weather_max: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset into the payload, in values.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub dtype: Dtype,
    pub model: ModelSpec,
    pub normalizer: NormalizerSpec,
    pub tensors: Vec<TensorEntry>,
    pub payload: String,
}

pub fn save(stem: &Path, model: &WedNet) -> Result<()> {
    let mut tensors = Vec::new();
    let mut values = Vec::new();
    for (name, m) in model.store.iter() {
        tensors.push(TensorEntry { name: name.to_string(), shape: [m.rows, m.cols], offset: values.len() });
        values.extend_from_slice(&m.data);
    }
    let n = &model.normalizer;
    let header = CheckpointHeader {
        kind: "checkpoint".into(),
        dtype: Dtype::F64,
        model: ModelSpec::from(&model.config),
        normalizer: NormalizerSpec {
            flow_mean: n.flow_mean.clone(),
            flow_std: n.flow_std.clone(),
            weather_min: n.weather_min.clone(),
            weather_max: n.weather_max.clone(),
        },
        tensors,
        payload: bin_path(stem).file_name().unwrap().to_string_lossy().into_owned(),
    };
    write_json_bin(stem, &header, &encode(&values, Dtype::F64))
}

pub fn load(json: &Path) -> Result<WedNet> {
    let (header, bytes) = read_json_bin::<CheckpointHeader>(json, |h| &h.payload)?;
    ensure!(header.kind == "checkpoint", "{} is a {:?} file, not a checkpoint", json.display(), header.kind);
    let values = decode(&bytes, header.dtype)?;
    let mut parts = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let len = t.shape[0] * t.shape[1];
        ensure!(t.offset + len <= values.len(), "{}: tensor {} runs past the payload", json.display(), t.name);
        parts.push((t.name.clone(), Matrix::from_vec(t.shape[0], t.shape[1], values[t.offset..t.offset + len].to_vec())));
    }
    let n = header.normalizer;
    let normalizer = Normalizer {
        flow_mean: n.flow_mean,
        flow_std: n.flow_std,
        weather_min: n.weather_min,
        weather_max: n.weather_max,
    };
    let config = header.model.to_config()?;
    WedNet::from_parts(config, normalizer, &parts).with_context(|| format!("loading {}", json.display()))
}

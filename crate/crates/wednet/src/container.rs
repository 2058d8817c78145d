//! JSON header plus little-endian binary payload.
//!
//! `<stem>.json` describes the payload stored in `<stem>.bin` next to it.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use wednet_core::datamodel::{Feature, HourStamp, STTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub unit: String,
}

/// Header of a dense tensor file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub kind: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub schema: Vec<FeatureSpec>,
    #[serde(default)]
    pub time_index: Vec<String>,
    pub payload: String,
}

pub fn json_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

pub fn bin_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

pub fn encode(values: &[f64], dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.width());
    for &v in values {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode(bytes: &[u8], dtype: Dtype) -> Result<Vec<f64>> {
    ensure!(bytes.len() % dtype.width() == 0, "payload of {} bytes is not a whole number of {dtype:?} values", bytes.len());
    Ok(match dtype {
        Dtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    })
}

/// Writes `<stem>.json` with `header` and the payload to `<stem>.bin`.
pub fn write_json_bin<H: Serialize>(stem: &Path, header: &H, payload: &[u8]) -> Result<()> {
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let json = serde_json::to_string_pretty(header)?;
    fs::write(json_path(stem), json).with_context(|| format!("writing {}", json_path(stem).display()))?;
    fs::write(bin_path(stem), payload).with_context(|| format!("writing {}", bin_path(stem).display()))?;
    Ok(())
}

/// Reads a header and the payload file it names, relative to the header.
pub fn read_json_bin<H: for<'de> Deserialize<'de>>(json: &Path, payload_of: impl Fn(&H) -> &str) -> Result<(H, Vec<u8>)> {
    let text = fs::read_to_string(json).with_context(|| format!("reading {}", json.display()))?;
    let header: H = serde_json::from_str(&text).with_context(|| format!("parsing {}", json.display()))?;
    let bin = json.parent().unwrap_or(Path::new(".")).join(payload_of(&header));
    let bytes = fs::read(&bin).with_context(|| format!("reading {}", bin.display()))?;
    Ok((header, bytes))
}

pub fn format_hour(h: HourStamp) -> String {
    DateTime::<Utc>::from_timestamp(h.unix_seconds(), 0)
        .map(|t| t.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| h.unix_seconds().to_string())
}

/// Accepts RFC 3339 timestamps and plain unix seconds.
pub fn parse_timestamp(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp());
    }
    if let Ok(t) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Ok(t.and_utc().timestamp());
    }
    bail!("unrecognised timestamp {s:?}")
}

pub fn parse_hour(s: &str) -> Result<HourStamp> {
    let secs = parse_timestamp(s)?;
    ensure!(secs.rem_euclid(3600) == 0, "time index entry {s:?} is not on the hour");
    Ok(HourStamp::from_unix_seconds(secs))
}

pub fn write_tensor(stem: &Path, kind: &str, tensor: &STTensor) -> Result<()> {
    let payload = bin_path(stem).file_name().unwrap().to_string_lossy().into_owned();
    let header = TensorHeader {
        kind: kind.to_string(),
        dtype: Dtype::F32,
        shape: vec![tensor.t(), tensor.n(), tensor.d()],
        schema: tensor.schema().iter().map(|f| FeatureSpec { name: f.name.clone(), unit: f.unit.clone() }).collect(),
        time_index: tensor.time_index().iter().map(|&h| format_hour(h)).collect(),
        payload,
    };
    write_json_bin(stem, &header, &encode(tensor.values(), Dtype::F32))
}

pub fn read_tensor(json: &Path) -> Result<(String, STTensor)> {
    let (header, bytes) = read_json_bin::<TensorHeader>(json, |h| &h.payload)?;
    ensure!(header.shape.len() == 3, "{}: expected a T×N×d shape", json.display());
    let values = decode(&bytes, header.dtype)?;
    let [t, n, d] = [header.shape[0], header.shape[1], header.shape[2]];
    ensure!(values.len() == t * n * d, "{}: payload has {} values, shape needs {}", json.display(), values.len(), t * n * d);
    ensure!(header.schema.len() == d, "{}: schema lists {} features, shape has {d}", json.display(), header.schema.len());
    ensure!(header.time_index.len() == t, "{}: time index has {} entries, shape has {t}", json.display(), header.time_index.len());
    let stamps = header.time_index.iter().map(|s| parse_hour(s)).collect::<Result<Vec<_>>>()?;
    let schema = header.schema.iter().map(|f| Feature::new(&f.name, &f.unit)).collect();
    let tensor = STTensor::new(values, n, schema, stamps).with_context(|| format!("validating {}", json.display()))?;
    Ok((header.kind, tensor))
}

//! Dataset directories.
//!
//! A dataset directory holds `graph.csv`, the `flow` and `weather` tensors
//! and, after augmentation, a `train_windows` file that replaces the
//! training split.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use wednet_core::datamodel::{HourStamp, RegionGraph, STTensor, SampleWindow};

use crate::container::{bin_path, decode, encode, format_hour, json_path, parse_hour, read_json_bin, read_tensor, write_json_bin, write_tensor, Dtype};
use crate::csvio::{read_graph, write_graph};

pub const GRAPH_FILE: &str = "graph.csv";
pub const FLOW_STEM: &str = "flow";
pub const WEATHER_STEM: &str = "weather";
pub const TRAIN_WINDOWS_STEM: &str = "train_windows";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graph: RegionGraph,
    pub flow: STTensor,
    pub weather: STTensor,
    /// Replacement training windows, typically an augmented training set.
    pub train_windows: Option<Vec<SampleWindow>>,
}

impl Dataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_graph(&dir.join(GRAPH_FILE), &self.graph)?;
        write_tensor(&dir.join(FLOW_STEM), "flow", &self.flow)?;
        write_tensor(&dir.join(WEATHER_STEM), "weather", &self.weather)?;
        if let Some(w) = &self.train_windows {
            write_windows(&dir.join(TRAIN_WINDOWS_STEM), w, &[])?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let graph = read_graph(&dir.join(GRAPH_FILE), None)?;
        let (_, flow) = read_tensor(&json_path(&dir.join(FLOW_STEM)))?;
        let (_, weather) = read_tensor(&json_path(&dir.join(WEATHER_STEM)))?;
        ensure!(flow.n() == graph.n(), "flow tensor has {} parcels, graph has {}", flow.n(), graph.n());
        let tw = json_path(&dir.join(TRAIN_WINDOWS_STEM));
        let train_windows = if tw.exists() { Some(read_windows(&tw)?.0) } else { None };
        Ok(Self { graph, flow, weather, train_windows })
    }
}

/// Resolves `--data`, falling back to `WEDNET_DATA_DIR`.
pub fn data_dir(arg: Option<PathBuf>) -> Result<PathBuf> {
    arg.or_else(|| std::env::var_os("WEDNET_DATA_DIR").map(PathBuf::from))
        .context("no data directory: pass --data or set WEDNET_DATA_DIR")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub base_id: u64,
    pub reference_id: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub id: u64,
    pub start_time: String,
    pub condition: String,
    pub mean_precip: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowsHeader {
    pub kind: String,
    pub dtype: Dtype,
    pub count: usize,
    pub history: usize,
    pub horizon: usize,
    pub parcels: usize,
    pub d_flow: usize,
    pub d_weather: usize,
    pub precip_feature: usize,
    pub windows: Vec<WindowMeta>,
    pub payload: String,
}

/// Writes windows; `provenance` is either empty or aligned with the tail of
/// `windows`.
pub fn write_windows(stem: &Path, windows: &[SampleWindow], provenance: &[Provenance]) -> Result<()> {
    let first = windows.first().context("no windows to write")?;
    ensure!(provenance.len() <= windows.len(), "more provenance records than windows");
    let offset = windows.len() - provenance.len();
    let mut values = Vec::new();
    let mut meta = Vec::with_capacity(windows.len());
    for (k, w) in windows.iter().enumerate() {
        ensure!(
            w.history_len() == first.history_len() && w.horizon() == first.horizon() && w.n_parcels == first.n_parcels,
            "window {} has a different shape",
            w.id
        );
        values.extend_from_slice(&w.flow_hist);
        values.extend_from_slice(&w.weather_hist);
        values.extend_from_slice(&w.flow_future);
        meta.push(WindowMeta {
            id: w.id,
            start_time: format_hour(w.start_time),
            condition: w.condition.value.as_str().into(),
            mean_precip: w.condition.mean_precip,
            provenance: k.checked_sub(offset).map(|p| provenance[p].clone()),
        });
    }
    let header = WindowsHeader {
        kind: "windows".into(),
        dtype: Dtype::F32,
        count: windows.len(),
        history: first.history_len(),
        horizon: first.horizon(),
        parcels: first.n_parcels,
        d_flow: first.d_flow,
        d_weather: first.d_weather,
        precip_feature: first.precip_feature,
        windows: meta,
        payload: bin_path(stem).file_name().unwrap().to_string_lossy().into_owned(),
    };
    write_json_bin(stem, &header, &encode(&values, Dtype::F32))
}

pub fn read_windows(json: &Path) -> Result<(Vec<SampleWindow>, WindowsHeader)> {
    let (header, bytes) = read_json_bin::<WindowsHeader>(json, |h| &h.payload)?;
    ensure!(header.kind == "windows", "{} is not a windows file", json.display());
    ensure!(header.windows.len() == header.count, "{}: count does not match metadata", json.display());
    let values = decode(&bytes, header.dtype)?;
    let (t, h, n) = (header.history, header.horizon, header.parcels);
    let (lf, lw, lo) = (t * n * header.d_flow, t * n * header.d_weather, h * n * header.d_flow);
    let per = lf + lw + lo;
    ensure!(values.len() == per * header.count, "{}: payload size does not match the header", json.display());
    let mut out = Vec::with_capacity(header.count);
    for (k, meta) in header.windows.iter().enumerate() {
        let chunk = &values[k * per..(k + 1) * per];
        let start: HourStamp = parse_hour(&meta.start_time)?;
        let mut w = SampleWindow {
            id: meta.id,
            n_parcels: n,
            d_flow: header.d_flow,
            d_weather: header.d_weather,
            flow_hist: chunk[..lf].to_vec(),
            weather_hist: chunk[lf..lf + lw].to_vec(),
            flow_future: chunk[lf + lw..].to_vec(),
            start_time: start,
            time_of_day: (0..t as i64).map(|s| start.offset(s).hour_of_day()).collect(),
            day_of_week: (0..t as i64).map(|s| start.offset(s).day_of_week()).collect(),
            precip_feature: header.precip_feature,
            condition: wednet_core::datamodel::ConditionLabel {
                value: wednet_core::datamodel::Condition::Normal,
                mean_precip: 0.0,
            },
        };
        w.relabel()?;
        ensure!(
            w.condition.value.as_str() == meta.condition,
            "{}: window {} is labelled {} but its weather says {}",
            json.display(),
            meta.id,
            meta.condition,
            w.condition.value.as_str()
        );
        out.push(w);
    }
    Ok((out, header))
}

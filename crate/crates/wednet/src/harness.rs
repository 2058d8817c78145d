//! Training runs, evaluation reports, ablations and augmentation runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use wednet_core::causalaug::{augment_dataset, AugmentParams, AugmentationRun};
use wednet_core::datamodel::{chronological_split, SampleWindow, Split};
use wednet_core::ingest::make_windows;
use wednet_core::metrics::{persistence_stats, ConditionStats, ErrorStats};
use wednet_core::model::{Normalizer, Variant, WedNet};
use wednet_core::train::{evaluate, train, TrainOutcome};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::container::json_path;
use crate::dataset::{write_windows, Dataset, Provenance, TRAIN_WINDOWS_STEM};

pub const CHECKPOINT_STEM: &str = "checkpoint";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    /// `None` when the condition has no samples.
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub samples: usize,
    pub entries: usize,
}

impl From<&ErrorStats> for ConditionMetrics {
    fn from(s: &ErrorStats) -> Self {
        let some = |v: f64| (s.entries > 0).then_some(v);
        Self { mae: some(s.mae()), rmse: some(s.rmse()), samples: s.samples, entries: s.entries }
    }
}

/// Test metrics in flow units. Equality ignores `wall_time_s`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub seed: u64,
    pub normal: ConditionMetrics,
    pub extreme: ConditionMetrics,
    pub overall: ConditionMetrics,
    pub config_hash: String,
    pub wall_time_s: f64,
}

impl PartialEq for MetricsReport {
    fn eq(&self, other: &Self) -> bool {
        self.variant == other.variant
            && self.seed == other.seed
            && self.normal == other.normal
            && self.extreme == other.extreme
            && self.overall == other.overall
            && self.config_hash == other.config_hash
    }
}

impl MetricsReport {
    pub fn new(stats: &ConditionStats, variant: Variant, seed: u64, config_hash: &str, wall_time_s: f64) -> Self {
        Self {
            variant: variant.to_string(),
            seed,
            normal: (&stats.normal).into(),
            extreme: (&stats.extreme).into(),
            overall: (&stats.overall()).into(),
            config_hash: config_hash.to_string(),
            wall_time_s,
        }
    }

    /// Rows of method × condition × metric.
    pub fn table(&self) -> String {
        let mut s = String::from("method,condition,mae,rmse,samples\n");
        for (name, c) in [("normal", &self.normal), ("extreme", &self.extreme), ("overall", &self.overall)] {
            let f = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
            writeln!(s, "{},{name},{},{},{}", self.variant, f(c.mae), f(c.rmse), c.samples).unwrap();
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub train: u64,
    pub augment: u64,
    pub synth: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub git_revision: Option<String>,
    pub seeds: Seeds,
    pub data: Option<String>,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, data: Option<&Path>) -> Self {
        Self {
            command: command.to_string(),
            config_hash: cfg.hash(),
            git_revision: git_revision(),
            seeds: Seeds { train: cfg.train.seed, augment: cfg.augment.seed, synth: cfg.synth.seed },
            data: data.map(|p| p.display().to_string()),
            artifacts: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

fn git_revision() -> Option<String> {
    let out = Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// The chronological split of `dataset` and the normalizer of its original
/// training part. A stored training set replaces the training split but never
/// the normalizer.
pub fn prepare_split(cfg: &RunConfig, dataset: &Dataset) -> Result<(Split, Normalizer)> {
    let windows = make_windows(&dataset.flow, &dataset.weather, cfg.window)?;
    let mut split = chronological_split(windows, cfg.split)?;
    let normalizer = Normalizer::fit(&split.train)?;
    if let Some(train) = &dataset.train_windows {
        split.train = train.clone();
    }
    Ok((split, normalizer))
}

pub struct TrainRun {
    pub outcome: TrainOutcome,
    pub report: MetricsReport,
}

/// Trains on the split, evaluates on its test part and, when `out` is given,
/// writes the checkpoint, logs, metrics and manifest there. `data` is only
/// recorded in the manifest.
pub fn train_run(cfg: &RunConfig, split: &Split, normalizer: Normalizer, out: Option<&Path>, data: Option<&Path>) -> Result<TrainRun> {
    let start = Instant::now();
    ensure!(!split.train.is_empty() && !split.valid.is_empty(), "empty training or validation split");
    let parcels = split.train[0].n_parcels;
    let model_cfg = cfg.model_for(parcels);
    let outcome = train(&model_cfg, &cfg.train, normalizer, &split.train, &split.valid, |e| {
        log::info!(
            "epoch {:>3}  loss {:.5} (pre {:.5}, dis {:.5})  valid MAE {:.5}  lr {:.2e}",
            e.epoch,
            e.total,
            e.loss_pre,
            e.loss_dis,
            e.valid_mae,
            e.lr
        );
    })?;
    if let Some(epoch) = outcome.diverged_at {
        log::warn!("non-finite loss in epoch {epoch}; keeping the best checkpoint from epoch {}", outcome.best_epoch);
    }
    let stats = evaluate(&outcome.model, &split.test)?;
    let report = MetricsReport::new(&stats, cfg.train.variant, cfg.train.seed, &cfg.hash(), start.elapsed().as_secs_f64());
    if let Some(dir) = out {
        write_train_artifacts(dir, cfg, &outcome, &report, data)?;
    }
    Ok(TrainRun { outcome, report })
}

fn write_train_artifacts(dir: &Path, cfg: &RunConfig, outcome: &TrainOutcome, report: &MetricsReport, data: Option<&Path>) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    checkpoint::save(&dir.join(CHECKPOINT_STEM), &outcome.model)?;
    let mut log = csv::Writer::from_path(dir.join("log.csv"))?;
    log.write_record(["epoch", "loss_pre", "loss_dis", "total", "valid_mae", "lr"])?;
    for e in &outcome.epochs {
        log.write_record([
            e.epoch.to_string(),
            e.loss_pre.to_string(),
            e.loss_dis.to_string(),
            e.total.to_string(),
            e.valid_mae.to_string(),
            e.lr.to_string(),
        ])?;
    }
    log.flush()?;
    let mut lr = csv::Writer::from_path(dir.join("lr.csv"))?;
    lr.write_record(["step", "lr"])?;
    for (k, v) in outcome.lr_trace.iter().enumerate() {
        lr.write_record([k.to_string(), v.to_string()])?;
    }
    lr.flush()?;
    write_json(&dir.join("metrics.json"), report)?;
    fs::write(dir.join("config.txt"), cfg.canonical())?;
    let mut manifest = Manifest::new("train", cfg, data);
    manifest.artifacts = ["checkpoint.json", "checkpoint.bin", "log.csv", "lr.csv", "metrics.json", "config.txt"]
        .map(String::from)
        .to_vec();
    manifest.write(dir)
}

/// Evaluates a trained model on `windows`.
pub fn evaluate_model(model: &WedNet, windows: &[SampleWindow], seed: u64, config_hash: &str) -> Result<MetricsReport> {
    let start = Instant::now();
    let stats = evaluate(model, windows)?;
    Ok(MetricsReport::new(&stats, model.config.variant, seed, config_hash, start.elapsed().as_secs_f64()))
}

/// Predict-last-value baseline on `windows`.
pub fn persistence_report(windows: &[SampleWindow], config_hash: &str) -> MetricsReport {
    let stats = persistence_stats(windows);
    let mut r = MetricsReport::new(&stats, Variant::Full, 0, config_hash, 0.0);
    r.variant = "persistence".into();
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; zero for a single value. Missing values
    /// are skipped.
    pub fn of(values: &[Option<f64>]) -> Self {
        let values: Vec<f64> = values.iter().flatten().copied().collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub parameters: usize,
    pub normal_mae: MeanStd,
    pub normal_rmse: MeanStd,
    pub extreme_mae: MeanStd,
    pub extreme_rmse: MeanStd,
    pub reports: Vec<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<18} {:>9} {:>20} {:>20} {:>20} {:>20}\n",
            "variant", "params", "normal MAE", "normal RMSE", "extreme MAE", "extreme RMSE"
        );
        let f = |m: &MeanStd| format!("{:.4} ± {:.4}", m.mean, m.std);
        for r in &self.rows {
            writeln!(
                s,
                "{:<18} {:>9} {:>20} {:>20} {:>20} {:>20}",
                r.variant,
                r.parameters,
                f(&r.normal_mae),
                f(&r.normal_rmse),
                f(&r.extreme_mae),
                f(&r.extreme_rmse)
            )
            .unwrap();
        }
        s
    }
}

/// Trains every variant once per seed on the same split.
pub fn run_ablation(cfg: &RunConfig, split: &Split, normalizer: &Normalizer, variants: &[Variant], seeds: &[u64]) -> Result<AblationTable> {
    ensure!(!seeds.is_empty(), "ablation needs at least one seed");
    ensure!(!variants.is_empty(), "ablation needs at least one variant");
    let mut rows = Vec::new();
    for &variant in variants {
        let mut reports = Vec::new();
        let mut parameters = 0;
        for &seed in seeds {
            let mut c = cfg.clone();
            c.train.variant = variant;
            c.train.seed = seed;
            log::info!("ablation: {variant} seed {seed}");
            let run = train_run(&c, split, normalizer.clone(), None, None)?;
            parameters = run.outcome.model.num_parameters();
            reports.push(run.report);
        }
        let stat = |f: fn(&MetricsReport) -> Option<f64>| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
        rows.push(AblationRow {
            variant: variant.to_string(),
            parameters,
            normal_mae: stat(|r| r.normal.mae),
            normal_rmse: stat(|r| r.normal.rmse),
            extreme_mae: stat(|r| r.extreme.mae),
            extreme_rmse: stat(|r| r.extreme.rmse),
            reports,
        });
    }
    Ok(AblationTable { seeds: seeds.to_vec(), rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub id: u64,
    pub base_id: u64,
    pub reference_id: u64,
    pub causal_parcels: Vec<usize>,
    pub causal_steps: Vec<usize>,
    pub condition: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedReport {
    pub id: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub r: usize,
    pub ratio: f64,
    pub window: usize,
    pub seed: u64,
    pub original_windows: usize,
    pub extremes: usize,
    pub matchable_extremes: usize,
    pub generated: usize,
    pub total_windows: usize,
    pub skipped: Vec<SkippedReport>,
    pub warnings: Vec<String>,
    pub samples: Vec<SampleProvenance>,
}

impl AugmentReport {
    pub fn new(run: &AugmentationRun, params: AugmentParams) -> Self {
        let indices = |v: &[bool]| (0..v.len()).filter(|&k| v[k]).collect::<Vec<_>>();
        Self {
            r: params.r,
            ratio: params.ratio,
            window: params.window,
            seed: params.seed,
            original_windows: run.dataset.len() - run.samples.len(),
            extremes: run.extremes,
            matchable_extremes: run.extremes - run.skipped.len(),
            generated: run.samples.len(),
            total_windows: run.dataset.len(),
            skipped: run.skipped.iter().map(|s| SkippedReport { id: s.id, reason: s.reason.clone() }).collect(),
            warnings: run.warnings.clone(),
            samples: run
                .samples
                .iter()
                .map(|s| SampleProvenance {
                    id: s.result.id,
                    base_id: s.base_id,
                    reference_id: s.reference_id,
                    causal_parcels: indices(&s.mask.causal_parcels),
                    causal_steps: indices(&s.mask.causal_steps),
                    condition: s.result.condition.value.as_str().into(),
                })
                .collect(),
        }
    }
}

/// Augments the original training split and writes a dataset directory whose
/// training windows are `D` followed by the generated samples.
pub fn augment_run(cfg: &RunConfig, dataset: &Dataset, model: &WedNet, out: &Path, data: Option<&Path>) -> Result<AugmentReport> {
    let windows = make_windows(&dataset.flow, &dataset.weather, cfg.window)?;
    let split = chronological_split(windows, cfg.split)?;
    let run = augment_dataset(model, &split.train, cfg.augment)?;
    for w in &run.warnings {
        log::warn!("{w}");
    }
    let report = AugmentReport::new(&run, cfg.augment);
    let base = Dataset { train_windows: None, ..dataset.clone() };
    base.write(out)?;
    let provenance: Vec<Provenance> =
        run.samples.iter().map(|s| Provenance { base_id: s.base_id, reference_id: s.reference_id }).collect();
    write_windows(&out.join(TRAIN_WINDOWS_STEM), &run.dataset, &provenance)?;
    write_json(&out.join("augment_report.json"), &report)?;
    fs::write(out.join("config.txt"), cfg.canonical())?;
    let mut manifest = Manifest::new("augment", cfg, data);
    manifest.artifacts = vec![
        "graph.csv".into(),
        "flow.json".into(),
        "weather.json".into(),
        "train_windows.json".into(),
        "augment_report.json".into(),
    ];
    manifest.write(out)?;
    Ok(report)
}

/// Checkpoint json path inside a run directory, or the given file itself.
pub fn checkpoint_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        json_path(&path.join(CHECKPOINT_STEM))
    } else {
        path.to_path_buf()
    }
}

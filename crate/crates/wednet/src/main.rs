use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use wednet::checkpoint;
use wednet::config::RunConfig;
use wednet::csvio::{read_graph, read_stations, read_trips};
use wednet::dataset::{data_dir, Dataset};
use wednet::harness::{
    augment_run, checkpoint_path, evaluate_model, persistence_report, prepare_split, run_ablation, train_run, write_json, Manifest,
};
use wednet::viz;
use wednet_core::ingest::{aggregate_trips, idw_interpolate, HourSpan, IdwOptions};
use wednet_core::model::{Variant, WedNet};
use wednet_core::synth::generate_synthetic;

/// Weather-disentangled urban flow forecasting.
///
/// A window is labelled extreme when its mean hourly precipitation is
/// strictly greater than 0.1 in/hr; a mean of exactly 0.1 is normal.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build flow and weather tensors from trip and weather-station CSVs.
    Ingest {
        #[arg(long)]
        trips: PathBuf,
        #[arg(long)]
        stations: PathBuf,
        /// Parcel CSV with parcel_id, lat, lon.
        #[arg(long)]
        graph: PathBuf,
        /// Optional headerless N×N distance matrix in metres.
        #[arg(long)]
        distances: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Carry the previous hour forward over station gaps.
        #[arg(long)]
        ffill: bool,
        #[arg(long, default_value_t = 2.0)]
        idw_power: f64,
    },
    /// Generate a synthetic weather-coupled city.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and evaluate it on the test split.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate causally augmented training windows.
    Augment {
        #[arg(long, env = "WEDNET_DATA_DIR")]
        data: Option<PathBuf>,
        /// Checkpoint json or a run directory.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Augmented samples per extreme window.
        #[arg(long)]
        r: Option<usize>,
        /// Proportion of parcels and steps kept as causal.
        #[arg(long)]
        ra: Option<f64>,
        /// Temporal expansion around selected steps.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long, env = "WEDNET_DATA_DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train several variants over several seeds.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        /// Comma-separated variants; all when omitted.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot causal maps, latent projections or prediction curves.
    Viz {
        #[arg(long, env = "WEDNET_DATA_DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: VizKind,
        /// Test window used by causal_map.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Target parcel for causal_map, plotted parcel for pred_curve.
        #[arg(long, default_value_t = 0)]
        parcel: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VizKind {
    CausalMap,
    Pca,
    PredCurve,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, env = "WEDNET_DATA_DIR")]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Weight of the discriminator loss.
    #[arg(long)]
    eta: Option<f64>,
    /// Gradient reversal strength.
    #[arg(long)]
    grl_lambda: Option<f64>,
}

impl RunArgs {
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(v) = self.variant {
            cfg.train.variant = v;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(e) = self.eta {
            cfg.train.eta = e;
        }
        if let Some(l) = self.grl_lambda {
            cfg.model.grl_lambda = l;
        }
        cfg.validate()?;
        Ok((cfg, data_dir(self.data.clone())?))
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

/// Configuration whose window shape matches a trained model.
fn config_for(model: &WedNet, path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = load_config(path)?;
    cfg.window.history = model.config.steps;
    cfg.window.horizon = model.config.horizon;
    cfg.model = model.config.clone();
    cfg.train.variant = model.config.variant;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Cmd::Ingest { trips, stations, graph, distances, out, ffill, idw_power } => {
            let graph = read_graph(&graph, distances.as_deref())?;
            let trips = read_trips(&trips)?;
            let flow = aggregate_trips(&trips, &graph, None)?;
            let span = HourSpan { start: flow.time_index()[0], hours: flow.t() };
            let readings = read_stations(&stations)?;
            let weather = idw_interpolate(&readings, &graph, Some(span), IdwOptions { power: idw_power, forward_fill: ffill })?;
            let parcels = graph.n();
            Dataset { graph, flow, weather, train_windows: None }.write(&out)?;
            log::info!("wrote {} hours × {parcels} parcels to {}", span.hours, out.display());
        }
        Cmd::Synth { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let city = generate_synthetic(&cfg.synth)?;
            Dataset { graph: city.graph, flow: city.flow, weather: city.weather, train_windows: None }.write(&out)?;
            let mut manifest = Manifest::new("synth", &cfg, None);
            manifest.artifacts = vec!["graph.csv".into(), "flow.json".into(), "weather.json".into()];
            manifest.write(&out)?;
            log::info!("wrote a {}-parcel, {}-day city to {}", cfg.synth.n_parcels, cfg.synth.n_days, out.display());
        }
        Cmd::Train { run, out } => {
            let (cfg, data) = run.load()?;
            let dataset = Dataset::load(&data)?;
            let (split, normalizer) = prepare_split(&cfg, &dataset)?;
            log::info!("{} train, {} valid, {} test windows", split.train.len(), split.valid.len(), split.test.len());
            let result = train_run(&cfg, &split, normalizer, Some(&out), Some(&data))?;
            print!("{}", result.report.table());
        }
        Cmd::Augment { data, ckpt, config, r, ra, window, seed, out } => {
            let data = data_dir(data)?;
            let model = checkpoint::load(&checkpoint_path(&ckpt))?;
            let mut cfg = config_for(&model, config.as_deref())?;
            let a = &mut cfg.augment;
            a.r = r.unwrap_or(a.r);
            a.ratio = ra.unwrap_or(a.ratio);
            a.window = window.unwrap_or(a.window);
            a.seed = seed.unwrap_or(a.seed);
            let dataset = Dataset::load(&data)?;
            let report = augment_run(&cfg, &dataset, &model, &out, Some(&data))?;
            println!(
                "{} extremes, {} matchable, {} generated, {} windows in total",
                report.extremes, report.matchable_extremes, report.generated, report.total_windows
            );
        }
        Cmd::Eval { data, ckpt, config, out } => {
            let data = data_dir(data)?;
            let model = checkpoint::load(&checkpoint_path(&ckpt))?;
            let cfg = config_for(&model, config.as_deref())?;
            let (split, _) = prepare_split(&cfg, &Dataset::load(&data)?)?;
            let report = evaluate_model(&model, &split.test, cfg.train.seed, &cfg.hash())?;
            print!("{}", report.table());
            print!("{}", persistence_report(&split.test, &cfg.hash()).table().lines().skip(1).map(|l| format!("{l}\n")).collect::<String>());
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
        }
        Cmd::Ablate { run, seeds, variants, out } => {
            let (cfg, data) = run.load()?;
            let variants = if variants.is_empty() { Variant::ALL.to_vec() } else { variants };
            let (split, normalizer) = prepare_split(&cfg, &Dataset::load(&data)?)?;
            let table = run_ablation(&cfg, &split, &normalizer, &variants, &seeds)?;
            write_json(&out.join("ablation.json"), &table)?;
            std::fs::write(out.join("ablation.txt"), table.render())?;
            Manifest::new("ablate", &cfg, Some(&data)).write(&out)?;
            print!("{}", table.render());
        }
        Cmd::Viz { data, ckpt, config, kind, sample, parcel, out } => {
            let data = data_dir(data)?;
            let model = checkpoint::load(&checkpoint_path(&ckpt))?;
            let cfg = config_for(&model, config.as_deref())?;
            let dataset = Dataset::load(&data)?;
            let (split, _) = prepare_split(&cfg, &dataset)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            match kind {
                VizKind::CausalMap => {
                    ensure!(sample < split.test.len(), "sample {sample} out of range ({} test windows)", split.test.len());
                    let rows = viz::causal_map(&model, &split.test[sample], parcel, cfg.augment.ratio)?;
                    viz::write_causal_map(&out.join("causal_map"), &dataset.graph, parcel, &rows)?;
                }
                VizKind::Pca => viz::write_pca(&out.join("pca"), &viz::pca(&model, &split.test)?)?,
                VizKind::PredCurve => {
                    let stride = cfg.window.stride;
                    if stride != 1 {
                        bail!("pred_curve needs stride 1 windows, the configuration has stride {stride}");
                    }
                    let points = viz::pred_curve(&model, &split.test, parcel, 0)?;
                    viz::write_pred_curve(&out.join("pred_curve"), parcel, &points)?;
                }
            }
        }
    }
    Ok(())
}

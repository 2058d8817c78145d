//! Raster plots with the CSV data behind them.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use image::{Rgb, RgbImage};
use nalgebra::DMatrix;
use wednet_core::causalaug::{identify_spatial, influence};
use wednet_core::datamodel::{RegionGraph, SampleWindow};
use wednet_core::model::WedNet;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GREY: Rgb<u8> = Rgb([200, 200, 200]);
const BLUE: Rgb<u8> = Rgb([40, 90, 200]);
const RED: Rgb<u8> = Rgb([210, 40, 40]);
const PALE_BLUE: Rgb<u8> = Rgb([225, 235, 250]);

struct Canvas {
    img: RgbImage,
    margin: u32,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Self { img: RgbImage::from_pixel(w, h, WHITE), margin: 20 }
    }

    fn plot_w(&self) -> f64 {
        (self.img.width() - 2 * self.margin) as f64
    }

    fn plot_h(&self) -> f64 {
        (self.img.height() - 2 * self.margin) as f64
    }

    /// Maps unit coordinates (y up) to pixels.
    fn to_px(&self, x: f64, y: f64) -> (i64, i64) {
        let px = self.margin as f64 + x.clamp(0.0, 1.0) * self.plot_w();
        let py = self.margin as f64 + (1.0 - y.clamp(0.0, 1.0)) * self.plot_h();
        (px.round() as i64, py.round() as i64)
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn square(&mut self, (x, y): (i64, i64), half: i64, c: Rgb<u8>, filled: bool) {
        for dy in -half..=half {
            for dx in -half..=half {
                if filled || dx.abs() == half || dy.abs() == half {
                    self.put(x + dx, y + dy, c);
                }
            }
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn frame(&mut self) {
        let (a, b) = (self.to_px(0.0, 0.0), self.to_px(1.0, 1.0));
        self.line(a, (b.0, a.1), GREY);
        self.line(a, (a.0, b.1), GREY);
        self.line(b, (b.0, a.1), GREY);
        self.line(b, (a.0, b.1), GREY);
    }

    fn save(&self, path: &Path) -> Result<()> {
        self.img.save(path).with_context(|| format!("writing {}", path.display()))
    }
}

/// White to red.
fn heat(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    let fade = (255.0 * (1.0 - v)).round() as u8;
    Rgb([255, fade, fade])
}

fn unit_range(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    (lo, span)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CausalMapRow {
    pub source: usize,
    pub self_score: f64,
    pub cross_score: Option<f64>,
    pub causal: bool,
}

/// Influence of every parcel on `target` in one window, as ranked by the
/// spatial identification step.
pub fn causal_map(model: &WedNet, window: &SampleWindow, target: usize, ratio: f64) -> Result<Vec<CausalMapRow>> {
    ensure!(target < window.n_parcels, "target parcel {target} out of range ({} parcels)", window.n_parcels);
    let bundle = model.extract_attention(&model.prepare(window)?)?;
    let sel = identify_spatial(&bundle.self_spatial, bundle.cross_spatial.as_ref(), ratio)?;
    let sf = influence(&bundle.self_spatial);
    let sw = bundle.cross_spatial.as_ref().map(influence);
    Ok((0..window.n_parcels)
        .map(|j| CausalMapRow {
            source: j,
            self_score: sf[target][j],
            cross_score: sw.as_ref().map(|s| s[target][j]),
            causal: sel.per_parcel[target].contains(&j),
        })
        .collect())
}

pub fn write_causal_map(out: &Path, graph: &RegionGraph, target: usize, rows: &[CausalMapRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(out.with_extension("csv"))?;
    w.write_record(["target", "source", "parcel_id", "lat", "lon", "self_score", "cross_score", "causal"])?;
    for r in rows {
        let (lat, lon) = graph.centroids()[r.source];
        w.write_record([
            target.to_string(),
            r.source.to_string(),
            graph.parcel_ids()[r.source].clone(),
            lat.to_string(),
            lon.to_string(),
            r.self_score.to_string(),
            r.cross_score.map_or_else(String::new, |v| v.to_string()),
            r.causal.to_string(),
        ])?;
    }
    w.flush()?;

    let mut c = Canvas::new(480, 480);
    c.frame();
    let cents = graph.centroids();
    let (lat0, lat_span) = unit_range(cents.iter().map(|p| p.0));
    let (lon0, lon_span) = unit_range(cents.iter().map(|p| p.1));
    let score = |r: &CausalMapRow| r.self_score + r.cross_score.unwrap_or(0.0);
    let max = rows.iter().map(score).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for r in rows {
        let (lat, lon) = cents[r.source];
        let p = c.to_px(0.05 + 0.9 * (lon - lon0) / lon_span, 0.05 + 0.9 * (lat - lat0) / lat_span);
        c.square(p, 9, heat(score(r) / max), true);
        c.square(p, 9, if r.causal { BLACK } else { GREY }, false);
        if r.source == target {
            c.square(p, 12, BLUE, false);
        }
    }
    c.save(&out.with_extension("png"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaPoint {
    pub sample: u64,
    pub pc1: f64,
    pub pc2: f64,
    pub branch: &'static str,
    pub condition: &'static str,
}

/// Projects pooled intrinsic and weather representations of every window
/// onto the two leading principal components of their joint set.
pub fn pca(model: &WedNet, windows: &[SampleWindow]) -> Result<Vec<PcaPoint>> {
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for w in windows {
        let (intr, weat) = model.pooled_representations(&model.prepare(w)?)?;
        rows.push(intr);
        meta.push((w.id, "intrinsic", w.condition.value.as_str()));
        if let Some(weat) = weat {
            rows.push(weat);
            meta.push((w.id, "weather", w.condition.value.as_str()));
        }
    }
    ensure!(rows.len() >= 2, "need at least two representations for a projection");
    let d = rows[0].len();
    let mut x = DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]);
    let mean = x.row_mean();
    for mut r in x.row_iter_mut() {
        r -= &mean;
    }
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.context("SVD did not converge")?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let comp = |k: usize| order.get(k).map(|&o| v_t.row(o).transpose());
    let (c1, c2) = (comp(0).context("no components")?, comp(1));
    Ok(meta
        .into_iter()
        .enumerate()
        .map(|(r, (sample, branch, condition))| {
            let row = x.row(r);
            PcaPoint {
                sample,
                pc1: row.dot(&c1.transpose()),
                pc2: c2.as_ref().map_or(0.0, |c| row.dot(&c.transpose())),
                branch,
                condition,
            }
        })
        .collect())
}

pub fn write_pca(out: &Path, points: &[PcaPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(out.with_extension("csv"))?;
    w.write_record(["sample", "pc1", "pc2", "branch", "condition"])?;
    for p in points {
        w.write_record([p.sample.to_string(), p.pc1.to_string(), p.pc2.to_string(), p.branch.into(), p.condition.into()])?;
    }
    w.flush()?;

    let mut c = Canvas::new(480, 480);
    c.frame();
    let (x0, xs) = unit_range(points.iter().map(|p| p.pc1));
    let (y0, ys) = unit_range(points.iter().map(|p| p.pc2));
    for p in points {
        let px = c.to_px(0.05 + 0.9 * (p.pc1 - x0) / xs, 0.05 + 0.9 * (p.pc2 - y0) / ys);
        let colour = if p.condition == "extreme" { RED } else { BLUE };
        c.square(px, 3, colour, p.branch == "intrinsic");
    }
    c.save(&out.with_extension("png"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub time: String,
    pub predicted: f64,
    pub truth: f64,
    pub extreme: bool,
}

/// One-step-ahead prediction of `feature` at `parcel` over consecutive
/// windows.
pub fn pred_curve(model: &WedNet, windows: &[SampleWindow], parcel: usize, feature: usize) -> Result<Vec<CurvePoint>> {
    let first = windows.first().context("no windows")?;
    ensure!(parcel < first.n_parcels, "parcel {parcel} out of range ({} parcels)", first.n_parcels);
    ensure!(feature < first.d_flow, "flow feature {feature} out of range");
    windows
        .iter()
        .map(|w| {
            let pred = model.predict_window(&model.prepare(w)?)?;
            let k = parcel * w.d_flow + feature;
            let at = w.start_time.offset(w.history_len() as i64);
            Ok(CurvePoint {
                time: crate::container::format_hour(at),
                predicted: pred[k],
                truth: w.flow_future[k],
                extreme: w.is_extreme(),
            })
        })
        .collect()
}

pub fn write_pred_curve(out: &Path, parcel: usize, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(out.with_extension("csv"))?;
    w.write_record(["time", "parcel", "predicted", "truth", "condition"])?;
    for p in points {
        w.write_record([
            p.time.clone(),
            parcel.to_string(),
            p.predicted.to_string(),
            p.truth.to_string(),
            (if p.extreme { "extreme" } else { "normal" }).into(),
        ])?;
    }
    w.flush()?;

    let mut c = Canvas::new(800, 320);
    let n = points.len().max(2);
    let (lo, span) = unit_range(points.iter().flat_map(|p| [p.predicted, p.truth]));
    let x = |k: usize| k as f64 / (n - 1) as f64;
    let y = |v: f64| 0.05 + 0.9 * (v - lo) / span;
    for (k, p) in points.iter().enumerate() {
        if p.extreme {
            let (a, b) = (c.to_px(x(k), 0.0), c.to_px(x(k), 1.0));
            c.line(a, b, PALE_BLUE);
        }
    }
    c.frame();
    for k in 1..points.len() {
        let (a, b) = (&points[k - 1], &points[k]);
        c.line(c.to_px(x(k - 1), y(a.truth)), c.to_px(x(k), y(b.truth)), BLACK);
        c.line(c.to_px(x(k - 1), y(a.predicted)), c.to_px(x(k), y(b.predicted)), RED);
    }
    c.save(&out.with_extension("png"))
}

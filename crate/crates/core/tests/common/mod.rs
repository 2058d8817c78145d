#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wednet_core::datamodel::{label_condition, HourStamp, SampleWindow};
use wednet_core::model::ModelConfig;

/// Random window shaped for `cfg`; precipitation is scaled by `rain`.
pub fn random_window(cfg: &ModelConfig, seed: u64, rain: f64) -> SampleWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, n) = (cfg.steps, cfg.parcels);
    let mut draw = |len: usize, scale: f64| -> Vec<f64> { (0..len).map(|_| scale * rng.random::<f64>()).collect() };
    let flow_hist = draw(t * n * cfg.flow_dim, 20.0);
    let mut weather_hist = draw(t * n * cfg.weather_dim, 1.0);
    for k in 0..t * n {
        weather_hist[k * cfg.weather_dim] *= rain;
    }
    let flow_future = draw(cfg.horizon * n * cfg.flow_dim, 20.0);
    let precip: Vec<f64> = weather_hist.iter().step_by(cfg.weather_dim).copied().collect();
    let start = HourStamp(420_000 + 7 * seed as i64);
    SampleWindow {
        id: seed,
        n_parcels: n,
        d_flow: cfg.flow_dim,
        d_weather: cfg.weather_dim,
        flow_hist,
        weather_hist,
        flow_future,
        start_time: start,
        time_of_day: (0..t as i64).map(|k| start.offset(k).hour_of_day()).collect(),
        day_of_week: (0..t as i64).map(|k| start.offset(k).day_of_week()).collect(),
        precip_feature: 0,
        condition: label_condition(&precip, n).unwrap(),
    }
}

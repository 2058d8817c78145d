//! CSV readers and writers for region graphs, trips and weather stations.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use wednet_core::datamodel::{HourStamp, RegionGraph};
use wednet_core::ingest::{StationReading, TripRecord};

use crate::container::parse_timestamp;

#[derive(Debug, Serialize, Deserialize)]
struct ParcelRow {
    parcel_id: String,
    lat: f64,
    lon: f64,
}

#[derive(Debug, Deserialize)]
struct TripRow {
    pickup_ts: String,
    dropoff_ts: String,
    pickup_parcel: String,
    dropoff_parcel: String,
}

#[derive(Debug, Deserialize)]
struct StationRow {
    station_id: String,
    lat: f64,
    lon: f64,
    ts: String,
    precip: Option<f64>,
    temp: Option<f64>,
    wind: Option<f64>,
}

/// Reads `(parcel_id, lat, lon)` rows and, when given, a headerless `N×N`
/// distance matrix in metres.
pub fn read_graph(path: &Path, distances: Option<&Path>) -> Result<RegionGraph> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let (mut ids, mut centroids) = (Vec::new(), Vec::new());
    for (k, row) in rdr.deserialize::<ParcelRow>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), k + 1))?;
        ids.push(row.parcel_id);
        centroids.push((row.lat, row.lon));
    }
    let graph = match distances {
        None => RegionGraph::new(ids, centroids)?,
        Some(dpath) => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(false)
                .from_path(dpath)
                .with_context(|| format!("opening {}", dpath.display()))?;
            let mut values = Vec::new();
            for rec in rdr.records() {
                for field in rec?.iter() {
                    values.push(field.trim().parse::<f64>().with_context(|| format!("{}: bad distance {field:?}", dpath.display()))?);
                }
            }
            RegionGraph::with_distances(ids, centroids, values)?
        }
    };
    Ok(graph)
}

pub fn write_graph(path: &Path, graph: &RegionGraph) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for (id, &(lat, lon)) in graph.parcel_ids().iter().zip(graph.centroids()) {
        w.serialize(ParcelRow { parcel_id: id.clone(), lat, lon })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trips(path: &Path) -> Result<Vec<TripRecord>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    rdr.deserialize::<TripRow>()
        .enumerate()
        .map(|(k, row)| {
            let row = row.with_context(|| format!("{} row {}", path.display(), k + 1))?;
            Ok(TripRecord {
                pickup_ts: parse_timestamp(&row.pickup_ts)?,
                dropoff_ts: parse_timestamp(&row.dropoff_ts)?,
                pickup_parcel: row.pickup_parcel,
                dropoff_parcel: row.dropoff_parcel,
            })
        })
        .collect()
}

/// Station readings; timestamps are floored to the hour and empty cells are
/// missing values.
pub fn read_stations(path: &Path) -> Result<Vec<StationReading>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    rdr.deserialize::<StationRow>()
        .enumerate()
        .map(|(k, row)| {
            let row = row.with_context(|| format!("{} row {}", path.display(), k + 1))?;
            ensure!(row.lat.is_finite() && row.lon.is_finite(), "{} row {}: bad station location", path.display(), k + 1);
            Ok(StationReading {
                station_id: row.station_id,
                location: (row.lat, row.lon),
                hour: HourStamp::from_unix_seconds(parse_timestamp(&row.ts)?),
                precip: row.precip,
                temp: row.temp,
                wind: row.wind,
            })
        })
        .collect()
}

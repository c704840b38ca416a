use std::collections::HashMap;

use chrono::{DateTime, Utc};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::trips::{Location, SpatialObject, TripRecord};
use super::{check_interval, Direction, FlowMatrix, Mode};
use crate::error::{Error, Result};

pub const DEFAULT_SNAP_RADIUS_M: f64 = 500.0;

const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Great-circle distance in metres.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRequest {
    pub mode: Mode,
    pub interval_minutes: u32,
    /// Half-open `[start, end)`.
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub direction: Direction,
    pub snap_radius_m: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinStats {
    pub matched: usize,
    pub other_mode: usize,
    pub outside_range: usize,
    pub unknown_station: usize,
    pub beyond_radius: usize,
}

/// Counts trip endpoints per station and time bin.
///
/// Bins are left-closed: an event at exactly `origin + k·Δ` lands in bin `k`.
/// Coordinate endpoints snap to the nearest station of the requested mode
/// when it lies within `snap_radius_m`; otherwise the trip is dropped and
/// counted in [`BinStats::beyond_radius`].
pub fn bin_flows(
    trips: &[TripRecord],
    stations: &[SpatialObject],
    request: &BinRequest,
) -> Result<(FlowMatrix, BinStats)> {
    check_interval(request.interval_minutes)?;
    let stations: Vec<&SpatialObject> =
        stations.iter().filter(|s| s.mode == request.mode).collect();
    if stations.is_empty() {
        return Err(Error::config(format!(
            "no stations registered for mode {}",
            request.mode
        )));
    }
    if request.end <= request.start {
        return Err(Error::config("time range is empty"));
    }
    if !(request.snap_radius_m > 0.0) {
        return Err(Error::config("snap radius must be positive"));
    }
    let interval_s = request.interval_minutes as i64 * 60;
    let span_s = (request.end - request.start).num_seconds();
    let n_bins = ((span_s + interval_s - 1) / interval_s) as usize;
    let column: HashMap<&str, usize> = stations
        .iter()
        .enumerate()
        .map(|(j, s)| (s.id.as_str(), j))
        .collect();

    let mut values = Array2::<u32>::zeros((n_bins, stations.len()));
    let mut stats = BinStats::default();
    for trip in trips {
        if trip.mode != request.mode {
            stats.other_mode += 1;
            continue;
        }
        let (time, loc) = match request.direction {
            Direction::Arrivals => (trip.end_time, &trip.end_loc),
            Direction::Departures => (trip.start_time, &trip.start_loc),
        };
        if time < request.start || time >= request.end {
            stats.outside_range += 1;
            continue;
        }
        let station = match loc {
            Location::Station(id) => match column.get(id.as_str()) {
                Some(&j) => j,
                None => {
                    stats.unknown_station += 1;
                    continue;
                }
            },
            Location::Coord { lat, lon } => {
                match nearest(&stations, *lat, *lon, request.snap_radius_m) {
                    Some(j) => j,
                    None => {
                        stats.beyond_radius += 1;
                        continue;
                    }
                }
            }
        };
        let bin = ((time - request.start).num_seconds() / interval_s) as usize;
        values[[bin, station]] += 1;
        stats.matched += 1;
    }
    let matrix = FlowMatrix::new(
        request.mode.clone(),
        request.interval_minutes,
        request.start,
        request.direction,
        stations.iter().map(|s| s.id.clone()).collect(),
        values,
    )?;
    Ok((matrix, stats))
}

fn nearest(stations: &[&SpatialObject], lat: f64, lon: f64, radius_m: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, s) in stations.iter().enumerate() {
        let d = haversine_m(lat, lon, s.lat, s.lon);
        // Strict comparison keeps the first station on ties.
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best.filter(|&(_, d)| d <= radius_m).map(|(j, _)| j)
}

/// Drops stations whose mean hourly flow over the whole matrix is below
/// `threshold_per_hour`. Surviving columns keep their order.
pub fn filter_stations(flow: &FlowMatrix, threshold_per_hour: f64) -> Result<FlowMatrix> {
    let hours = flow.total_hours();
    if hours < 1.0 {
        return Err(Error::data(format!(
            "flow matrix spans {hours} h, need at least 1 h"
        )));
    }
    let keep: Vec<usize> = flow
        .values
        .columns()
        .into_iter()
        .enumerate()
        .filter(|(_, col)| col.iter().map(|&v| v as f64).sum::<f64>() / hours >= threshold_per_hour)
        .map(|(j, _)| j)
        .collect();
    if keep.is_empty() {
        return Err(Error::data(format!(
            "every station falls below {threshold_per_hour} trips/hour"
        )));
    }
    let mut out = flow.select_stations(&keep);
    out.filter_threshold = Some(threshold_per_hour);
    Ok(out)
}

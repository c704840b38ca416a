//! Trip ingestion, station binning and dataset preparation.

mod binning;
mod io;
mod normalize;
mod split;
mod trips;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use ndarray::{s, Array2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use binning::{
    bin_flows, filter_stations, haversine_m, BinRequest, BinStats, DEFAULT_SNAP_RADIUS_M,
};
pub use io::{read_flow_matrix, write_flow_matrix, FlowSidecar};
pub use normalize::{Normalizer, Scaling, STD_FLOOR};
pub use split::{build_windows, split_and_window, DatasetSplit, Window, WindowSet, WindowSplits};
pub use trips::{
    parse_stations, parse_trips, Location, RejectionStats, SpatialKind, SpatialObject, TripRecord,
    TripSchema,
};

/// Allowed bin widths in minutes.
pub const INTERVALS: [u32; 4] = [15, 30, 45, 60];

pub const DEFAULT_FILTER_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Bike,
    Metro,
    Taxi,
    Other(String),
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Bike => f.write_str("bike"),
            Mode::Metro => f.write_str("metro"),
            Mode::Taxi => f.write_str("taxi"),
            Mode::Other(label) => f.write_str(label),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let label = s.trim();
        match label.to_ascii_lowercase().as_str() {
            "" => Err(Error::data("empty mode label")),
            "bike" => Ok(Mode::Bike),
            "metro" => Ok(Mode::Metro),
            "taxi" => Ok(Mode::Taxi),
            _ => Ok(Mode::Other(label.to_string())),
        }
    }
}

impl Serialize for Mode {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which trip endpoint is counted as the flow event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Trip end events (inflow).
    #[default]
    Arrivals,
    /// Trip start events.
    Departures,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "arrivals" => Ok(Direction::Arrivals),
            "departures" => Ok(Direction::Departures),
            other => Err(Error::config(format!("unknown direction `{other}`"))),
        }
    }
}

pub(crate) fn check_interval(interval_minutes: u32) -> Result<()> {
    if INTERVALS.contains(&interval_minutes) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "interval must be one of {INTERVALS:?} minutes, got {interval_minutes}"
        )))
    }
}

/// Time-binned station counts: `values[[bin, station]]`.
///
/// Column `j` always refers to `station_ids[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    pub mode: Mode,
    pub interval_minutes: u32,
    pub origin_time: DateTime<Utc>,
    pub direction: Direction,
    pub station_ids: Vec<String>,
    pub values: Array2<u32>,
    /// Threshold used by [`filter_stations`], if the matrix has been filtered.
    pub filter_threshold: Option<f64>,
}

impl FlowMatrix {
    pub fn new(
        mode: Mode,
        interval_minutes: u32,
        origin_time: DateTime<Utc>,
        direction: Direction,
        station_ids: Vec<String>,
        values: Array2<u32>,
    ) -> Result<Self> {
        check_interval(interval_minutes)?;
        if values.ncols() != station_ids.len() {
            return Err(Error::contract(format!(
                "{} station ids for {} columns",
                station_ids.len(),
                values.ncols()
            )));
        }
        Ok(Self {
            mode,
            interval_minutes,
            origin_time,
            direction,
            station_ids,
            values,
            filter_threshold: None,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_stations(&self) -> usize {
        self.values.ncols()
    }

    pub fn interval(&self) -> Duration {
        Duration::minutes(self.interval_minutes as i64)
    }

    pub fn bin_start(&self, bin: usize) -> DateTime<Utc> {
        self.origin_time + self.interval() * bin as i32
    }

    /// End of the last bin (exclusive).
    pub fn end_time(&self) -> DateTime<Utc> {
        self.bin_start(self.n_bins())
    }

    pub fn bins_per_day(&self) -> usize {
        (24 * 60 / self.interval_minutes) as usize
    }

    pub fn total_hours(&self) -> f64 {
        self.n_bins() as f64 * self.interval_minutes as f64 / 60.0
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }

    /// Sums consecutive groups of `factor` bins into one coarser bin.
    ///
    /// Trailing bins that do not fill a whole group are dropped.
    pub fn aggregate(&self, factor: usize) -> Result<FlowMatrix> {
        if factor == 0 {
            return Err(Error::config("aggregation factor must be at least 1"));
        }
        let interval = self.interval_minutes * factor as u32;
        check_interval(interval)?;
        let n_out = self.n_bins() / factor;
        let mut values = Array2::<u32>::zeros((n_out, self.n_stations()));
        for (k, mut row) in values.outer_iter_mut().enumerate() {
            for b in k * factor..(k + 1) * factor {
                row += &self.values.row(b);
            }
        }
        Ok(FlowMatrix {
            interval_minutes: interval,
            values,
            ..self.clone()
        })
    }

    /// Keeps only the first `n_bins` bins.
    pub fn truncate(&self, n_bins: usize) -> FlowMatrix {
        let n = n_bins.min(self.n_bins());
        FlowMatrix {
            values: self.values.slice(s![..n, ..]).to_owned(),
            ..self.clone()
        }
    }

    /// Keeps bins `[start, end)`, shifting the origin accordingly.
    pub fn slice_bins(&self, start: usize, end: usize) -> Result<FlowMatrix> {
        if start > end || end > self.n_bins() {
            return Err(Error::contract(format!(
                "bin range {start}..{end} outside 0..{}",
                self.n_bins()
            )));
        }
        Ok(FlowMatrix {
            origin_time: self.bin_start(start),
            values: self.values.slice(s![start..end, ..]).to_owned(),
            ..self.clone()
        })
    }

    /// Keeps the given columns in the given order.
    pub fn select_stations(&self, columns: &[usize]) -> FlowMatrix {
        let values = self.values.select(ndarray::Axis(1), columns);
        FlowMatrix {
            station_ids: columns
                .iter()
                .map(|&j| self.station_ids[j].clone())
                .collect(),
            values,
            ..self.clone()
        }
    }
}

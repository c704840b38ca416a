use std::collections::HashSet;
use std::io::Read;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};

/// A trip endpoint: either a known station id or a raw coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum Location {
    Station(String),
    Coord { lat: f64, lon: f64 },
}

impl Location {
    /// Parses `"S1"` as a station id and `"41.88;-87.63"` as a coordinate.
    pub fn parse(field: &str) -> std::result::Result<Location, LocationError> {
        let field = field.trim();
        if field.is_empty() {
            return Err(LocationError::Empty);
        }
        let Some((lat, lon)) = field.split_once(';') else {
            return Ok(Location::Station(field.to_string()));
        };
        let lat: f64 = lat
            .trim()
            .parse()
            .map_err(|_| LocationError::BadCoordinate)?;
        let lon: f64 = lon
            .trim()
            .parse()
            .map_err(|_| LocationError::BadCoordinate)?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(LocationError::BadCoordinate);
        }
        Ok(Location::Coord { lat, lon })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocationError {
    Empty,
    BadCoordinate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub mode: Mode,
    pub start_time: DateTime<Utc>,
    pub end_time: DateTime<Utc>,
    pub start_loc: Location,
    pub end_loc: Location,
}

/// Column names for the five trip fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripSchema {
    pub mode: String,
    pub start_time: String,
    pub start_loc: String,
    pub end_time: String,
    pub end_loc: String,
}

impl Default for TripSchema {
    fn default() -> Self {
        Self {
            mode: "mode".into(),
            start_time: "start_time".into(),
            start_loc: "start_loc".into(),
            end_time: "end_time".into(),
            end_loc: "end_loc".into(),
        }
    }
}

/// Counts of skipped rows by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionStats {
    pub bad_timestamp: usize,
    pub end_before_start: usize,
    pub bad_location: usize,
    pub bad_mode: usize,
    pub malformed_row: usize,
}

impl RejectionStats {
    pub fn total(&self) -> usize {
        self.bad_timestamp
            + self.end_before_start
            + self.bad_location
            + self.bad_mode
            + self.malformed_row
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::config(format!("trip schema column `{name}` not present in header")))
}

fn parse_time(field: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(field.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

/// Reads trip rows from CSV text with a header line.
///
/// Well-formed rows become [`TripRecord`]s; every other row is counted in the
/// returned [`RejectionStats`].
pub fn parse_trips<R: Read>(
    reader: R,
    schema: &TripSchema,
) -> Result<(Vec<TripRecord>, RejectionStats)> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut stats = RejectionStats::default();
    let headers = csv.headers()?.clone();
    if headers.is_empty() {
        return Ok((Vec::new(), stats));
    }
    let idx_mode = column(&headers, &schema.mode)?;
    let idx_start = column(&headers, &schema.start_time)?;
    let idx_start_loc = column(&headers, &schema.start_loc)?;
    let idx_end = column(&headers, &schema.end_time)?;
    let idx_end_loc = column(&headers, &schema.end_loc)?;

    let mut trips = Vec::new();
    for row in csv.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                stats.malformed_row += 1;
                continue;
            }
        };
        let field = |i: usize| row.get(i);
        let (Some(mode), Some(start), Some(start_loc), Some(end), Some(end_loc)) = (
            field(idx_mode),
            field(idx_start),
            field(idx_start_loc),
            field(idx_end),
            field(idx_end_loc),
        ) else {
            stats.malformed_row += 1;
            continue;
        };
        let Ok(mode) = mode.parse::<Mode>() else {
            stats.bad_mode += 1;
            continue;
        };
        let (Some(start_time), Some(end_time)) = (parse_time(start), parse_time(end)) else {
            stats.bad_timestamp += 1;
            continue;
        };
        if end_time < start_time {
            stats.end_before_start += 1;
            continue;
        }
        let (Ok(start_loc), Ok(end_loc)) = (Location::parse(start_loc), Location::parse(end_loc))
        else {
            stats.bad_location += 1;
            continue;
        };
        trips.push(TripRecord {
            mode,
            start_time,
            end_time,
            start_loc,
            end_loc,
        });
    }
    Ok((trips, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialKind {
    Station,
    ZoneCentroid,
}

/// A station or zone centroid that owns one flow-matrix column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialObject {
    pub id: String,
    pub mode: Mode,
    pub lat: f64,
    pub lon: f64,
    pub kind: SpatialKind,
}

/// Reads a station registry CSV (`id,mode,lat,lon,kind`).
pub fn parse_stations<R: Read>(reader: R) -> Result<Vec<SpatialObject>> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let idx: Vec<usize> = ["id", "mode", "lat", "lon", "kind"]
        .iter()
        .map(|name| column(&headers, name))
        .collect::<Result<_>>()?;
    let mut seen = HashSet::new();
    let mut stations = Vec::new();
    for (line, row) in csv.records().enumerate() {
        let row = row?;
        let get = |k: usize| row.get(idx[k]).unwrap_or("");
        let bad = |what: &str| Error::data(format!("station registry row {}: {what}", line + 1));
        let id = get(0).to_string();
        if id.is_empty() {
            return Err(bad("empty id"));
        }
        let mode: Mode = get(1).parse().map_err(|_| bad("bad mode"))?;
        let lat: f64 = get(2).parse().map_err(|_| bad("bad lat"))?;
        let lon: f64 = get(3).parse().map_err(|_| bad("bad lon"))?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(bad("coordinate out of range"));
        }
        let kind = match get(4).to_ascii_lowercase().as_str() {
            "station" => SpatialKind::Station,
            "zone_centroid" | "centroid" => SpatialKind::ZoneCentroid,
            other => return Err(bad(&format!("unknown kind `{other}`"))),
        };
        if !seen.insert((mode.clone(), id.clone())) {
            return Err(bad(&format!("duplicate id `{id}` for mode {mode}")));
        }
        stations.push(SpatialObject {
            id,
            mode,
            lat,
            lon,
            kind,
        });
    }
    Ok(stations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    const HEADER: &str = "mode,start_time,start_loc,end_time,end_loc\n";

    fn parse(body: &str) -> (Vec<TripRecord>, RejectionStats) {
        parse_trips(format!("{HEADER}{body}").as_bytes(), &TripSchema::default()).unwrap()
    }

    #[test]
    fn parses_station_row() {
        let (trips, stats) = parse("bike,2019-03-01T08:00:00Z,S1,2019-03-01T08:17:00Z,S2\n");
        assert_eq!(stats.total(), 0);
        assert_eq!(trips.len(), 1);
        let t = &trips[0];
        assert_eq!(t.mode, Mode::Bike);
        assert_eq!(t.start_loc, Location::Station("S1".into()));
        assert_eq!(t.end_loc, Location::Station("S2".into()));
        assert_eq!(
            t.start_time,
            Utc.with_ymd_and_hms(2019, 3, 1, 8, 0, 0).unwrap()
        );
        assert_eq!(
            t.end_time,
            Utc.with_ymd_and_hms(2019, 3, 1, 8, 17, 0).unwrap()
        );
    }

    #[test]
    fn end_before_start_is_rejected() {
        let (trips, stats) = parse("bike,2019-03-01T08:00:00Z,S1,2019-03-01T07:59:00Z,S2\n");
        assert!(trips.is_empty());
        assert_eq!(stats.end_before_start, 1);
        assert_eq!(stats.total(), 1);
    }

    #[test]
    fn empty_stream_yields_nothing() {
        let (trips, stats) = parse_trips("".as_bytes(), &TripSchema::default()).unwrap();
        assert!(trips.is_empty());
        assert_eq!(stats.total(), 0);
        let (trips, stats) = parse("");
        assert!(trips.is_empty());
        assert_eq!(stats.total(), 0);
    }

    #[test]
    fn malformed_rows_are_counted() {
        let (trips, stats) = parse(
            "taxi,2019-03-01T08:00:00Z,41.88;-87.63,2019-03-01T08:20:00+01:00,41.9;-87.6\n\
             taxi,not-a-time,S1,2019-03-01T08:20:00Z,S2\n\
             taxi,2019-03-01T08:00:00Z,95;10,2019-03-01T08:20:00Z,S2\n\
             taxi,2019-03-01T08:00:00Z,S1\n\
             ,2019-03-01T08:00:00Z,S1,2019-03-01T08:20:00Z,S2\n",
        );
        // The +01:00 end lands at 07:20Z, before the start.
        assert!(trips.is_empty());
        assert_eq!(stats.end_before_start, 1);
        assert_eq!(stats.bad_timestamp, 1);
        assert_eq!(stats.bad_location, 1);
        assert_eq!(stats.malformed_row, 1);
        assert_eq!(stats.bad_mode, 1);
    }

    #[test]
    fn coordinates_parse() {
        let (trips, _) = parse("taxi,2019-03-01T08:00:00Z,41.88;-87.63,2019-03-01T08:20:00Z,S9\n");
        assert_eq!(
            trips[0].start_loc,
            Location::Coord {
                lat: 41.88,
                lon: -87.63
            }
        );
        assert_eq!(trips[0].mode, Mode::Taxi);
    }

    #[test]
    fn missing_schema_column_is_config_error() {
        let err = parse_trips(
            "mode,start_time,end_time\n".as_bytes(),
            &TripSchema::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn custom_schema_maps_columns() {
        let schema = TripSchema {
            mode: "kind".into(),
            start_time: "t0".into(),
            start_loc: "from".into(),
            end_time: "t1".into(),
            end_loc: "to".into(),
        };
        let text = "to,from,t1,t0,kind\nB,A,2019-03-01T09:00:00Z,2019-03-01T08:00:00Z,metro\n";
        let (trips, _) = parse_trips(text.as_bytes(), &schema).unwrap();
        assert_eq!(trips[0].mode, Mode::Metro);
        assert_eq!(trips[0].end_loc, Location::Station("B".into()));
    }

    #[test]
    fn station_registry() {
        let text =
            "id,mode,lat,lon,kind\nS1,bike,41.0,-87.0,station\nZ1,taxi,41.1,-87.1,zone_centroid\n";
        let stations = parse_stations(text.as_bytes()).unwrap();
        assert_eq!(stations.len(), 2);
        assert_eq!(stations[1].kind, SpatialKind::ZoneCentroid);

        let dup = "id,mode,lat,lon,kind\nS1,bike,41.0,-87.0,station\nS1,bike,41.0,-87.0,station\n";
        assert!(parse_stations(dup.as_bytes()).is_err());
        // Same id under a different mode is fine.
        let ok = "id,mode,lat,lon,kind\nS1,bike,41.0,-87.0,station\nS1,taxi,41.0,-87.0,station\n";
        assert_eq!(parse_stations(ok.as_bytes()).unwrap().len(), 2);
    }
}

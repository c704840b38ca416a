use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Direction, FlowMatrix, Mode};
use crate::error::{Error, Result};

/// Metadata stored next to a flow-matrix CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSidecar {
    pub mode: Mode,
    pub interval_minutes: u32,
    pub origin_time: DateTime<Utc>,
    pub direction: Direction,
    pub filter_threshold: Option<f64>,
    pub station_count: usize,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `<path>` as CSV (bin start, one column per station) and the
/// metadata sidecar as `<path>.json` with the extension replaced.
pub fn write_flow_matrix(flow: &FlowMatrix, path: &Path) -> Result<()> {
    let mut csv = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["bin_start".to_string()];
    header.extend(flow.station_ids.iter().cloned());
    csv.write_record(&header)?;
    for (k, row) in flow.values.outer_iter().enumerate() {
        let mut record = vec![flow.bin_start(k).to_rfc3339_opts(SecondsFormat::Secs, true)];
        record.extend(row.iter().map(|v| v.to_string()));
        csv.write_record(&record)?;
    }
    csv.flush()?;

    let sidecar = FlowSidecar {
        mode: flow.mode.clone(),
        interval_minutes: flow.interval_minutes,
        origin_time: flow.origin_time,
        direction: flow.direction,
        filter_threshold: flow.filter_threshold,
        station_count: flow.n_stations(),
    };
    let mut out = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(&mut out, &sidecar)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_flow_matrix(path: &Path) -> Result<FlowMatrix> {
    let sidecar: FlowSidecar =
        serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
    let mut csv = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let station_ids: Vec<String> = csv.headers()?.iter().skip(1).map(str::to_string).collect();
    if station_ids.len() != sidecar.station_count {
        return Err(Error::data(format!(
            "{}: header has {} stations, sidecar says {}",
            path.display(),
            station_ids.len(),
            sidecar.station_count
        )));
    }
    let mut cells = Vec::new();
    let mut n_bins = 0;
    for row in csv.records() {
        let row = row?;
        if row.len() != station_ids.len() + 1 {
            return Err(Error::data(format!(
                "{}: ragged row {}",
                path.display(),
                n_bins + 1
            )));
        }
        let expected = sidecar.origin_time
            + chrono::Duration::minutes(sidecar.interval_minutes as i64) * n_bins;
        let stamp = DateTime::parse_from_rfc3339(&row[0]).map_err(|e| {
            Error::data(format!(
                "{}: bad timestamp `{}`: {e}",
                path.display(),
                &row[0]
            ))
        })?;
        if stamp != expected {
            return Err(Error::data(format!(
                "{}: bin {n_bins} starts at {stamp}, expected {expected}",
                path.display()
            )));
        }
        for cell in row.iter().skip(1) {
            cells.push(cell.parse::<u32>().map_err(|_| {
                Error::data(format!("{}: non-count cell `{cell}`", path.display()))
            })?);
        }
        n_bins += 1;
    }
    let values = Array2::from_shape_vec((n_bins as usize, station_ids.len()), cells)
        .map_err(|e| Error::Internal(e.to_string()))?;
    let mut flow = FlowMatrix::new(
        sidecar.mode,
        sidecar.interval_minutes,
        sidecar.origin_time,
        sidecar.direction,
        station_ids,
        values,
    )?;
    flow.filter_threshold = sidecar.filter_threshold;
    Ok(flow)
}

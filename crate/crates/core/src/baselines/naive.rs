use std::collections::HashMap;
use std::ops::Range;

use chrono::{Datelike, Timelike, Weekday};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowdata::FlowMatrix;

/// Persistence forecast: each target bin repeats the previous bin.
pub fn one_step(values: &Array2<f64>, targets: &[usize]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((targets.len(), values.ncols()));
    for (r, &t) in targets.iter().enumerate() {
        if t == 0 || t > values.nrows() {
            return Err(Error::contract(format!(
                "target bin {t} has no predecessor in 0..{}",
                values.nrows()
            )));
        }
        out.row_mut(r).assign(&values.row(t - 1));
    }
    Ok(out)
}

/// Which averaging rule produced a historical-average prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HaRule {
    /// Mean over training bins with the same weekday and time-of-day slot.
    WeekdaySlot,
    /// Mean over training bins with the same time-of-day slot.
    DailySlot,
    /// Mean over all training bins.
    TrainMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaPrediction {
    pub values: Array2<f64>,
    /// Rule used for each target row.
    pub rules: Vec<HaRule>,
}

fn slot_of(flow: &FlowMatrix, bin: usize) -> (Weekday, u32) {
    let start = flow.bin_start(bin);
    let minutes = start.hour() * 60 + start.minute();
    (start.weekday(), minutes / flow.interval_minutes)
}

#[derive(Default)]
struct Accumulator {
    sum: Option<Array1<f64>>,
    count: usize,
}

impl Accumulator {
    fn add(&mut self, row: ndarray::ArrayView1<f64>) {
        match &mut self.sum {
            Some(s) => *s += &row,
            None => self.sum = Some(row.to_owned()),
        }
        self.count += 1;
    }

    fn mean(&self) -> Option<Array1<f64>> {
        self.sum.as_ref().map(|s| s / self.count as f64)
    }
}

/// Averages training bins that share the target's weekday and time slot,
/// falling back to the time slot alone, then to the training mean.
pub fn historical_average(
    flow: &FlowMatrix,
    train: Range<usize>,
    targets: &[usize],
) -> Result<HaPrediction> {
    if train.is_empty() || train.end > flow.n_bins() {
        return Err(Error::data(format!(
            "historical average needs a nonempty train range, got {train:?}"
        )));
    }
    let values = flow.to_f64();
    let mut weekly: HashMap<(Weekday, u32), Accumulator> = HashMap::new();
    let mut daily: HashMap<u32, Accumulator> = HashMap::new();
    let mut overall = Accumulator::default();
    for t in train {
        let (day, slot) = slot_of(flow, t);
        let row = values.row(t);
        weekly.entry((day, slot)).or_default().add(row);
        daily.entry(slot).or_default().add(row);
        overall.add(row);
    }
    let fallback = overall.mean().expect("nonempty train");

    let mut out = Array2::zeros((targets.len(), flow.n_stations()));
    let mut rules = Vec::with_capacity(targets.len());
    for (r, &t) in targets.iter().enumerate() {
        let (day, slot) = slot_of(flow, t);
        let (mean, rule) = if let Some(m) = weekly.get(&(day, slot)).and_then(Accumulator::mean) {
            (m, HaRule::WeekdaySlot)
        } else if let Some(m) = daily.get(&slot).and_then(Accumulator::mean) {
            (m, HaRule::DailySlot)
        } else {
            (fallback.clone(), HaRule::TrainMean)
        };
        out.row_mut(r).assign(&mean);
        rules.push(rule);
    }
    Ok(HaPrediction { values: out, rules })
}

//! Error metrics, improving rates and report rendering.

mod report;

pub use report::{
    attach_improving_rates, render_report, MetricsRow, Producer, RenderedReport, ReportLayout,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed and predicted flows over a set of target bins.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub producer: String,
    pub horizon_minutes: u32,
    pub target_bins: Vec<usize>,
    /// `T × N`, original scale.
    pub observed: Array2<f64>,
    /// `T × N`, original scale.
    pub predicted: Array2<f64>,
}

impl PredictionSet {
    pub fn new(
        producer: impl Into<String>,
        horizon_minutes: u32,
        target_bins: Vec<usize>,
        observed: Array2<f64>,
        predicted: Array2<f64>,
    ) -> Result<Self> {
        if observed.dim() != predicted.dim() {
            return Err(Error::contract(format!(
                "observed {:?} and predicted {:?} differ in shape",
                observed.dim(),
                predicted.dim()
            )));
        }
        if target_bins.len() != observed.nrows() {
            return Err(Error::contract(
                "one target bin per prediction row required",
            ));
        }
        Ok(Self {
            producer: producer.into(),
            horizon_minutes,
            target_bins,
            observed,
            predicted,
        })
    }

    pub fn n_stations(&self) -> usize {
        self.observed.ncols()
    }

    pub fn n_targets(&self) -> usize {
        self.observed.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mae: f64,
    pub rmse: f64,
    /// `None` when every observation is equal (zero total variance).
    pub r2: Option<f64>,
}

/// MAE, RMSE and R² over all stations and intervals.
///
/// R² uses the grand mean of the observations.
pub fn compute_scores(observed: &Array2<f64>, predicted: &Array2<f64>) -> Result<Scores> {
    if observed.dim() != predicted.dim() {
        return Err(Error::contract("observed and predicted differ in shape"));
    }
    if observed.is_empty() {
        return Err(Error::data("cannot score an empty prediction set"));
    }
    let n = observed.len() as f64;
    let mean = observed.sum() / n;
    let (mut abs, mut sq, mut tot) = (0.0, 0.0, 0.0);
    for (&y, &p) in observed.iter().zip(predicted) {
        let e = y - p;
        abs += e.abs();
        sq += e * e;
        tot += (y - mean) * (y - mean);
    }
    Ok(Scores {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        r2: (tot > 0.0).then(|| 1.0 - sq / tot),
    })
}

pub fn compute_metrics(pred: &PredictionSet) -> Result<Scores> {
    compute_scores(&pred.observed, &pred.predicted)
}

/// `100 · (base − variant) / base`, in percent.
pub fn improving_rate(base_mae: f64, variant_mae: f64) -> Result<f64> {
    if !(base_mae > 0.0) {
        return Err(Error::data(format!(
            "base MAE must be positive, got {base_mae}"
        )));
    }
    Ok(100.0 * (base_mae - variant_mae) / base_mae)
}

/// One-decimal percent, e.g. `21.8%`.
pub fn format_rate(pct: f64) -> String {
    let s = format!("{pct:.1}");
    // Avoid printing "-0.0%".
    if s == "-0.0" {
        "0.0%".to_string()
    } else {
        format!("{s}%")
    }
}

use std::ops::Range;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y_t = c + Σ_k A_k · y_{t−k}` with ridge-penalized lag coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    pub order: usize,
    pub ridge: f64,
    pub intercept: Array1<f64>,
    /// `coefficients[k]` is `A_{k+1}`, `N × N`; row `i` is the equation of station `i`.
    pub coefficients: Vec<Array2<f64>>,
}

impl VarModel {
    pub const DEFAULT_ORDER: usize = 4;
    pub const DEFAULT_RIDGE: f64 = 1e-3;

    pub fn n_series(&self) -> usize {
        self.intercept.len()
    }
}

/// Fits every equation by least squares on `[1, y_{t−1}, …, y_{t−p}]` over
/// target bins `t ∈ train, t ≥ p`. The intercept is not penalized.
pub fn var_fit(
    values: &Array2<f64>,
    train: Range<usize>,
    order: usize,
    ridge: f64,
) -> Result<VarModel> {
    if order == 0 {
        return Err(Error::config("VAR order must be at least 1"));
    }
    if !(ridge >= 0.0) {
        return Err(Error::config("ridge penalty must be nonnegative"));
    }
    if train.end > values.nrows() {
        return Err(Error::contract("train range exceeds the series"));
    }
    let first = train.start.max(order);
    if train.end <= first || train.end - train.start < order + 1 {
        return Err(Error::data(format!(
            "VAR({order}) needs at least {} training bins, got {}",
            order + 1,
            train.len()
        )));
    }
    let n = values.ncols();
    let n_rows = train.end - first;
    let n_feat = 1 + order * n;
    let penalized = if ridge > 0.0 { order * n } else { 0 };
    let sqrt_ridge = ridge.sqrt();

    // Design matrix with ridge rows appended: [X; √λ·[0 | I]].
    let mut design = DMatrix::<f64>::zeros(n_rows + penalized, n_feat);
    let mut response = DMatrix::<f64>::zeros(n_rows + penalized, n);
    for (r, t) in (first..train.end).enumerate() {
        design[(r, 0)] = 1.0;
        for k in 0..order {
            for j in 0..n {
                design[(r, 1 + k * n + j)] = values[[t - 1 - k, j]];
            }
        }
        for j in 0..n {
            response[(r, j)] = values[[t, j]];
        }
    }
    for q in 0..penalized {
        design[(n_rows + q, 1 + q)] = sqrt_ridge;
    }

    let svd = design.svd(true, true);
    let tol = f64::EPSILON * (n_rows + penalized).max(n_feat) as f64 * svd.singular_values.max();
    let beta = svd
        .solve(&response, tol)
        .map_err(|e| Error::numeric(format!("VAR solve failed: {e}")))?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("VAR coefficients are not finite"));
    }

    let intercept = Array1::from_iter((0..n).map(|i| beta[(0, i)]));
    let coefficients = (0..order)
        .map(|k| Array2::from_shape_fn((n, n), |(i, j)| beta[(1 + k * n + j, i)]))
        .collect();
    Ok(VarModel {
        order,
        ridge,
        intercept,
        coefficients,
    })
}

/// One-step-ahead forecasts from observed lags, clamped at zero.
pub fn var_predict(
    model: &VarModel,
    values: &Array2<f64>,
    targets: &[usize],
) -> Result<Array2<f64>> {
    let n = model.n_series();
    if values.ncols() != n {
        return Err(Error::contract(format!(
            "VAR fitted on {n} series, got {}",
            values.ncols()
        )));
    }
    let mut out = Array2::zeros((targets.len(), n));
    for (r, &t) in targets.iter().enumerate() {
        if t < model.order || t > values.nrows() {
            return Err(Error::contract(format!(
                "target bin {t} lacks {} lags",
                model.order
            )));
        }
        let mut y = model.intercept.clone();
        for (k, a) in model.coefficients.iter().enumerate() {
            y += &a.dot(&values.row(t - 1 - k));
        }
        y.mapv_inplace(|v| v.max(0.0));
        out.row_mut(r).assign(&y);
    }
    Ok(out)
}

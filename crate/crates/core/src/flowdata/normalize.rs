use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::split::{Window, WindowSet};
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;

/// Per-station z-score transform fitted on training bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Normalizer {
    /// Fits mean and population std of each column over `bins`.
    pub fn fit(values: &Array2<f64>, bins: Range<usize>) -> Result<Self> {
        if bins.is_empty() || bins.end > values.nrows() {
            return Err(Error::contract(format!(
                "normalizer fit range {bins:?} invalid for {} bins",
                values.nrows()
            )));
        }
        let view = values.slice(s![bins, ..]);
        let mean = view.mean_axis(Axis(0)).expect("nonempty range");
        let std = view.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
        Ok(Self { mean, std })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mean: Array1::zeros(n),
            std: Array1::ones(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Normalizes the columns of `m` in place.
    pub fn apply_inplace(&self, m: &mut Array2<f64>) {
        for mut row in m.outer_iter_mut() {
            self.apply_row(&mut row);
        }
    }

    pub fn apply(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = m.clone();
        self.apply_inplace(&mut out);
        out
    }

    pub fn apply_row(&self, row: &mut ndarray::ArrayViewMut1<f64>) {
        row.zip_mut_with(&self.mean, |x, &mu| *x -= mu);
        row.zip_mut_with(&self.std, |x, &sd| *x /= sd);
    }

    pub fn invert(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = m.clone();
        for mut row in out.outer_iter_mut() {
            row.zip_mut_with(&self.std, |x, &sd| *x *= sd);
            row.zip_mut_with(&self.mean, |x, &mu| *x += mu);
        }
        out
    }

    pub fn invert_row(&self, row: ArrayView1<f64>) -> Array1<f64> {
        &row * &self.std + &self.mean
    }
}

/// Input and output normalizers for one model.
///
/// Single-mode models share one normalizer for both; split-brain models
/// read one mode and emit another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub input: Normalizer,
    pub output: Normalizer,
}

impl Scaling {
    pub fn shared(normalizer: Normalizer) -> Self {
        Self {
            input: normalizer.clone(),
            output: normalizer,
        }
    }

    /// Normalized copy of a window set.
    pub fn apply_windows(&self, windows: &WindowSet) -> Result<WindowSet> {
        let samples = windows
            .samples
            .iter()
            .map(|w| {
                if w.inputs.ncols() != self.input.dim() || w.target.len() != self.output.dim() {
                    return Err(Error::contract(format!(
                        "window {}x{} -> {} does not match scaling {} -> {}",
                        w.inputs.nrows(),
                        w.inputs.ncols(),
                        w.target.len(),
                        self.input.dim(),
                        self.output.dim()
                    )));
                }
                let inputs = self.input.apply(&w.inputs);
                let target = (&w.target - &self.output.mean) / &self.output.std;
                Ok(Window {
                    inputs,
                    target,
                    target_bin: w.target_bin,
                })
            })
            .collect::<Result<_>>()?;
        Ok(WindowSet {
            seq_len: windows.seq_len,
            samples,
        })
    }
}

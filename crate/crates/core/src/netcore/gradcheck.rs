//! Finite-difference verification of the analytic gradients.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{batch_steps, forward_batch, loss_and_grad};
use super::params::{BlockId, ModelParams, NetSpec};
use crate::error::Result;
use crate::flowdata::Window;
use crate::seeds::{derive_seed, rng_from_seed};

const DENOM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub block: BlockId,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub n_params: usize,
    pub max_rel_error: f64,
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn worst_block(&self) -> Option<BlockId> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .map(|b| b.block)
    }

    pub fn failing_blocks(&self, tolerance: f64) -> Vec<BlockId> {
        self.blocks
            .iter()
            .filter(|b| !(b.max_rel_error < tolerance))
            .map(|b| b.block)
            .collect()
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.failing_blocks(tolerance).is_empty()
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Compares `analytic` against central differences of the batch loss for
/// every parameter.
pub fn compare_gradients(
    params: &ModelParams,
    batch: &[&Window],
    analytic: &ModelParams,
    step: f64,
) -> Result<GradCheckReport> {
    let mut probe = params.clone();
    let mut blocks = Vec::new();
    for id in params.block_ids() {
        let len = params.block(id).map_or(0, <[f64]>::len);
        let mut worst = (0.0f64, 0usize);
        for k in 0..len {
            let original = probe.block(id).expect("block")[k];
            probe.block_mut(id).expect("block")[k] = original + step;
            let (plus, _) = loss_and_grad(&probe, batch)?;
            probe.block_mut(id).expect("block")[k] = original - step;
            let (minus, _) = loss_and_grad(&probe, batch)?;
            probe.block_mut(id).expect("block")[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.block(id).expect("analytic block")[k];
            let err = relative_error(a, numeric);
            if err > worst.0 || err.is_nan() {
                worst = (err, k);
            }
        }
        blocks.push(BlockError {
            block: id,
            max_rel_error: worst.0,
            worst_index: worst.1,
        });
    }
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        step,
        n_params: params.n_params(),
        max_rel_error,
        blocks,
    })
}

/// Random parameters and a random batch for `spec`, drawn from `seed`.
///
/// Targets sit 0.01 to 0.3 away from the initial prediction (random sign).
/// The small loss keeps finite-difference roundoff well below tiny gradient
/// entries, and the margin keeps every residual clear of the MAE kink.
pub fn random_problem(spec: &NetSpec, seed: u64, batch_size: usize) -> (ModelParams, Vec<Window>) {
    let mut rng = rng_from_seed(derive_seed(seed, &["gradcheck"]));
    let mut params = ModelParams::zeros(spec);
    for id in params.block_ids() {
        for v in params.block_mut(id).expect("block") {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let mut windows: Vec<Window> = (0..batch_size)
        .map(|k| Window {
            inputs: Array2::from_shape_fn((spec.seq_len, spec.input_dim), |_| {
                rng.random_range(-2.0..2.0)
            }),
            target: Array1::zeros(spec.output_dim),
            target_bin: spec.seq_len + k,
        })
        .collect();
    let refs: Vec<&Window> = windows.iter().collect();
    let (pred, _) = forward_batch(&params, &batch_steps(&refs)).expect("shapes follow spec");
    for (w, row) in windows.iter_mut().zip(pred.outer_iter()) {
        for (t, &p) in w.target.iter_mut().zip(row) {
            let offset: f64 = rng.random_range(0.01..0.3);
            *t = if rng.random_bool(0.5) {
                p + offset
            } else {
                p - offset
            };
        }
    }
    (params, windows)
}

/// Checks BPTT gradients of a random instance of `spec`.
pub fn gradient_check(spec: &NetSpec, seed: u64, step: f64) -> Result<GradCheckReport> {
    spec.validate()?;
    let (params, windows) = random_problem(spec, seed, 3);
    let batch: Vec<&Window> = windows.iter().collect();
    let (_, analytic) = loss_and_grad(&params, &batch)?;
    compare_gradients(&params, &batch, &analytic, step)
}

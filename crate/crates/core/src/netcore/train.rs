use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, Moments};
use super::lstm::{batch_steps, forward_batch, loss_and_grad};
use super::params::{BlockId, GateBlock, ModelParams, NetSpec};
use crate::error::{Error, Result};
use crate::flowdata::{Scaling, Window, WindowSet};
use crate::seeds::{derive_seed, rng_from_seed};

pub type FreezeMask = BTreeSet<BlockId>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub adam: AdamHyper,
    pub seed: u64,
    #[serde(default)]
    pub freeze: FreezeMask,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 150,
            adam: AdamHyper::default(),
            seed: 0,
            freeze: FreezeMask::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }

    /// Number of parameters the optimizer may update.
    pub fn trainable_params(&self, params: &ModelParams) -> usize {
        params
            .block_ids()
            .into_iter()
            .filter(|id| !self.freeze.contains(id))
            .map(|id| params.block(id).map_or(0, <[f64]>::len))
            .sum()
    }
}

/// Per-epoch losses on the normalized scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Training-set loss of the starting parameters.
    pub initial_train_loss: f64,
    /// Mean of the minibatch losses seen during each epoch.
    pub train_loss: Vec<f64>,
    /// Validation loss after each epoch; NaN when no validation windows exist.
    pub val_loss: Vec<f64>,
}

/// Glorot-uniform weights, zero biases except forget-gate biases of 1.
pub fn init_params(spec: &NetSpec, seed: u64) -> ModelParams {
    let mut rng = rng_from_seed(derive_seed(seed, &["init"]));
    let mut params = ModelParams::zeros(spec);
    let mut glorot = |m: &mut Array2<f64>, fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        m.mapv_inplace(|_| rng.random_range(-limit..limit));
    };
    for (k, layer) in params.layers.iter_mut().enumerate() {
        let hidden = spec.hidden_layers[k];
        glorot(&mut layer.w, spec.layer_input_dim(k), 4 * hidden);
        glorot(&mut layer.u, hidden, 4 * hidden);
        layer.b.slice_mut(ndarray::s![..hidden]).fill(1.0);
    }
    glorot(&mut params.w_out, spec.top_hidden(), spec.output_dim);
    params
}

fn mean_loss(params: &ModelParams, windows: &[Window], chunk: usize) -> Result<f64> {
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in windows.chunks(chunk.max(1)) {
        let refs: Vec<&Window> = batch.iter().collect();
        let (pred, _) = forward_batch(params, &batch_steps(&refs))?;
        for (row, w) in pred.outer_iter().zip(batch) {
            total += row
                .iter()
                .zip(&w.target)
                .map(|(p, y)| (p - y).abs())
                .sum::<f64>();
            count += w.target.len();
        }
    }
    Ok(total / count as f64)
}

fn check_windows(spec: &NetSpec, windows: &WindowSet, what: &str) -> Result<()> {
    for w in &windows.samples {
        if w.inputs.dim() != (spec.seq_len, spec.input_dim) || w.target.len() != spec.output_dim {
            return Err(Error::contract(format!(
                "{what} window {}x{} -> {} does not match network {}x{} -> {}",
                w.inputs.nrows(),
                w.inputs.ncols(),
                w.target.len(),
                spec.seq_len,
                spec.input_dim,
                spec.output_dim
            )));
        }
    }
    Ok(())
}

/// Minibatch Adam on the MAE loss for a fixed number of epochs.
///
/// Windows are given on the original scale and normalized with `scaling`.
/// Each epoch reshuffles with a generator derived from `config.seed`; the
/// result is bit-identical for identical inputs.
pub fn train(
    spec: &NetSpec,
    train_windows: &WindowSet,
    val_windows: &WindowSet,
    scaling: &Scaling,
    config: &TrainConfig,
    init: Option<ModelParams>,
) -> Result<(ModelParams, TrainTrace)> {
    spec.validate()?;
    config.validate()?;
    if train_windows.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    check_windows(spec, train_windows, "train")?;
    check_windows(spec, val_windows, "validation")?;
    let mut params = match init {
        Some(p) => {
            p.check_shapes(spec)?;
            p
        }
        None => init_params(spec, config.seed),
    };
    let known: BTreeSet<BlockId> = params.block_ids().into_iter().collect();
    if let Some(bad) = config.freeze.iter().find(|id| !known.contains(id)) {
        return Err(Error::config(format!(
            "freeze mask names unknown block {bad}"
        )));
    }

    let train_set = scaling.apply_windows(train_windows)?;
    let val_set = scaling.apply_windows(val_windows)?;
    let mut moments = Moments::zeros_like(&params);
    let mut rng = rng_from_seed(derive_seed(config.seed, &["shuffle"]));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0u64;

    let initial_train_loss = mean_loss(&params, &train_set.samples, config.batch_size)?;
    let mut trace = TrainTrace {
        initial_train_loss,
        train_loss: Vec::with_capacity(config.epochs),
        val_loss: Vec::with_capacity(config.epochs),
    };
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch_idx in order.chunks(config.batch_size) {
            let batch: Vec<&Window> = batch_idx.iter().map(|&k| &train_set.samples[k]).collect();
            let (loss, grads) = loss_and_grad(&params, &batch)?;
            step += 1;
            adam_step(
                &mut params,
                &grads,
                &mut moments,
                step,
                &config.adam,
                &config.freeze,
            );
            epoch_loss += loss * batch.len() as f64;
        }
        if let Some(block) = params.first_non_finite() {
            return Err(Error::numeric(format!(
                "parameters diverged in block {block}"
            )));
        }
        trace.train_loss.push(epoch_loss / train_set.len() as f64);
        trace
            .val_loss
            .push(mean_loss(&params, &val_set.samples, config.batch_size)?);
    }
    Ok((params, trace))
}

/// Predictions on the original scale, one row per window.
pub fn predict(
    params: &ModelParams,
    windows: &WindowSet,
    scaling: &Scaling,
    clamp_nonnegative: bool,
) -> Result<Array2<f64>> {
    let n_out = params.b_out.len();
    let mut out = Array2::zeros((windows.len(), n_out));
    let normalized = scaling.apply_windows(windows)?;
    for (chunk_idx, batch) in normalized.samples.chunks(256).enumerate() {
        let refs: Vec<&Window> = batch.iter().collect();
        let (pred, _) = forward_batch(params, &batch_steps(&refs))?;
        let pred = scaling.output.invert(&pred);
        for (r, row) in pred.outer_iter().enumerate() {
            out.row_mut(chunk_idx * 256 + r).assign(&row);
        }
    }
    if clamp_nonnegative {
        out.mapv_inplace(|v| v.max(0.0));
    }
    Ok(out)
}

/// Blocks of recurrent layer `layer` (1-based).
pub fn layer_block_ids(layer: usize) -> [BlockId; 3] {
    [
        BlockId::lstm(layer, GateBlock::Input),
        BlockId::lstm(layer, GateBlock::Recurrent),
        BlockId::lstm(layer, GateBlock::Bias),
    ]
}

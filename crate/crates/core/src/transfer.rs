//! Cross-modal transfer strategies on top of the stacked LSTM.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowdata::{build_windows, FlowMatrix, Scaling, WindowSet};
use crate::netcore::{
    init_params, layer_block_ids, train, BlockId, ModelParams, NetSpec, TrainConfig, TrainTrace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Trained from scratch on target data only.
    Base,
    /// Transplanted hidden layers, all parameters fine-tuned.
    FT,
    /// Transplanted hidden layers kept frozen.
    FTF,
    /// Source-mode flows in, target-mode flows out.
    SB,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Base, Strategy::FT, Strategy::FTF, Strategy::SB];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Base => "Base",
            Strategy::FT => "FT",
            Strategy::FTF => "FTF",
            Strategy::SB => "SB",
        }
    }

    pub fn needs_source_model(self) -> bool {
        matches!(self, Strategy::FT | Strategy::FTF)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown strategy {s:?} (expected Base, FT, FTF or SB)"
                ))
            })
    }
}

/// Blocks copied from the source model and the subset held fixed afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferPlan {
    pub strategy: Strategy,
    pub transferable: BTreeSet<BlockId>,
    pub frozen: BTreeSet<BlockId>,
}

impl TransferPlan {
    pub fn empty(strategy: Strategy) -> Self {
        Self {
            strategy,
            transferable: BTreeSet::new(),
            frozen: BTreeSet::new(),
        }
    }
}

/// Decides which blocks move from a source network to a target network.
///
/// Only recurrent layers above the first are station-count independent, so
/// layers 2..K are transplanted whole. The first layer (its input weights
/// depend on the station count) and the output head always stay fresh.
pub fn plan_transfer(
    source: &NetSpec,
    target: &NetSpec,
    strategy: Strategy,
) -> Result<TransferPlan> {
    match strategy {
        Strategy::Base => return Ok(TransferPlan::empty(strategy)),
        Strategy::SB => {
            return Err(Error::config(
                "split-brain trains from scratch and has no transfer plan",
            ))
        }
        Strategy::FT | Strategy::FTF => {}
    }
    if source.hidden_layers != target.hidden_layers {
        return Err(Error::IncompatibleArchitecture(format!(
            "source hidden layers {:?} differ from target {:?}",
            source.hidden_layers, target.hidden_layers
        )));
    }
    let transferable: BTreeSet<BlockId> = (2..=target.hidden_layers.len())
        .flat_map(layer_block_ids)
        .collect();
    let frozen = if strategy == Strategy::FTF {
        transferable.clone()
    } else {
        BTreeSet::new()
    };
    Ok(TransferPlan {
        strategy,
        transferable,
        frozen,
    })
}

/// Copies every transferable block of `source` into `target_init`.
pub fn apply_transfer(
    source: &ModelParams,
    mut target_init: ModelParams,
    plan: &TransferPlan,
) -> Result<ModelParams> {
    for &id in &plan.transferable {
        let src = source
            .block(id)
            .ok_or_else(|| Error::Internal(format!("source model lacks block {id}")))?;
        let dst = target_init
            .block_mut(id)
            .ok_or_else(|| Error::Internal(format!("target model lacks block {id}")))?;
        if src.len() != dst.len() {
            return Err(Error::Internal(format!(
                "block {id} has {} source values but {} target values",
                src.len(),
                dst.len()
            )));
        }
        dst.copy_from_slice(src);
    }
    Ok(target_init)
}

/// Trains the target model for one strategy.
///
/// FT and FTF start from a fresh initialization with the source's hidden
/// layers transplanted and reset optimizer moments. For SB the caller
/// supplies windows from `build_sb_samples`, so `spec` reads source-mode
/// stations and predicts target-mode stations.
pub fn train_with_strategy(
    strategy: Strategy,
    source: Option<&ModelParams>,
    spec: &NetSpec,
    train_windows: &WindowSet,
    val_windows: &WindowSet,
    scaling: &Scaling,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainTrace, TransferPlan)> {
    let fresh = init_params(spec, config.seed);
    let (init, plan) = match strategy {
        Strategy::Base | Strategy::SB => (fresh, TransferPlan::empty(strategy)),
        Strategy::FT | Strategy::FTF => {
            let source = source
                .ok_or_else(|| Error::config(format!("{strategy} needs a trained source model")))?;
            let plan = plan_transfer(&source.spec(spec.seq_len), spec, strategy)?;
            (apply_transfer(source, fresh, &plan)?, plan)
        }
    };
    let mut config = config.clone();
    config.freeze.extend(plan.frozen.iter().copied());
    let (params, trace) = train(
        spec,
        train_windows,
        val_windows,
        scaling,
        &config,
        Some(init),
    )?;
    Ok((params, trace, plan))
}

/// Restricts two flow matrices to their common, bin-aligned time range.
pub fn align_flows(source: &FlowMatrix, target: &FlowMatrix) -> Result<(FlowMatrix, FlowMatrix)> {
    if source.interval_minutes != target.interval_minutes {
        return Err(Error::data(format!(
            "source interval {} min differs from target interval {} min",
            source.interval_minutes, target.interval_minutes
        )));
    }
    let step = i64::from(source.interval_minutes) * 60;
    let offset = (target.origin_time - source.origin_time).num_seconds();
    if offset % step != 0 {
        return Err(Error::data(
            "source and target bin boundaries are not aligned",
        ));
    }
    let start = source.origin_time.max(target.origin_time);
    let end = source.end_time().min(target.end_time());
    if end <= start {
        return Err(Error::data("source and target time ranges do not overlap"));
    }
    let n = ((end - start).num_seconds() / step) as usize;
    let cut = |flow: &FlowMatrix| {
        let first = ((start - flow.origin_time).num_seconds() / step) as usize;
        flow.slice_bins(first, first + n)
    };
    Ok((cut(source)?, cut(target)?))
}

/// Windows whose inputs are source-mode bins `t−L..t` and targets are the
/// target-mode bin `t`, over the aligned range. Bin indices are relative to
/// the start of that range.
pub fn build_sb_samples(
    source: &FlowMatrix,
    target: &FlowMatrix,
    seq_len: usize,
) -> Result<WindowSet> {
    let (src, tgt) = align_flows(source, target)?;
    let n = src.n_bins();
    if n <= seq_len {
        return Err(Error::data(format!(
            "{n} aligned bins leave no windows of length {seq_len}"
        )));
    }
    build_windows(&src.to_f64(), &tgt.to_f64(), seq_len..n, seq_len)
}

//! Cross-modal passenger-flow forecasting.
//!
//! Trip records are binned into station-level flow matrices ([`flowdata`]),
//! forecast with a from-scratch stacked LSTM ([`netcore`]), and transferred
//! between transport modes with fine-tuning and split-brain strategies
//! ([`transfer`]). Classical baselines ([`baselines`]), evaluation metrics
//! ([`metrics`]), a seeded synthetic demand generator ([`synthgen`]) and an
//! end-to-end experiment runner ([`experiment`]) complete the toolkit.

// Negated comparisons such as `!(x > 0.0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod flowdata;
pub mod metrics;
pub mod netcore;
pub mod seeds;
pub mod synthgen;
pub mod transfer;

pub use error::{Error, Result};

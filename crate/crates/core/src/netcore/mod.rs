//! Stacked LSTM regressor trained with backpropagation through time and Adam.
//!
//! Gate blocks inside each `4·H` dimension are ordered forget, input, output,
//! candidate. The head is linear on the top layer's final hidden state.

mod adam;
mod checkpoint;
mod gradcheck;
mod lstm;
mod params;
mod train;

pub use adam::{adam_step, AdamHyper, Moments};
pub use checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{
    compare_gradients, gradient_check, random_problem, relative_error, BlockError, GradCheckReport,
};
pub use lstm::{batch_steps, forward, forward_batch, loss_and_grad, ForwardCache};
pub use params::{BlockId, GateBlock, LstmLayer, ModelParams, NetSpec};
pub use train::{
    init_params, layer_block_ids, predict, train, FreezeMask, TrainConfig, TrainTrace,
};

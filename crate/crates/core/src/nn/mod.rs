//! Dense feed-forward classifier: ReLU hidden layers, inverted dropout,
//! softmax cross-entropy, Adam, per-sample loss tracing and snapshots.
//!
//! All numerics are `f64`.

pub mod adam;
pub mod forward;
pub mod gradcheck;
pub mod params;
pub mod train;

pub use adam::{adam_step, adam_update, AdamHyper, AdamState};
pub use forward::{argmax_rows, backward_path, forward_path, predict, softmax_cross_entropy, softmax_rows, ForwardCache, Mode};
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use params::{Dense, Gradients, MlpParams, BASELINE_SHAPE};
pub use train::{
    epoch_batches, run_epochs, train, EpochTrace, LossRecording, Network, ParamSnapshot, SampleLoss, TrainConfig, TrainData,
    TrainOutcome, TrainResult, Trainable,
};

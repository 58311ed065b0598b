//! A small fully connected classifier trained from scratch.
//!
//! Hidden blocks are affine, batch norm, ELU and inverted dropout; the
//! output is an affine softmax trained with categorical cross-entropy and
//! full-batch Adam.

mod adam;
mod gradcheck;
mod network;
mod scaler;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, relative_error, GradCheckConfig, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use network::{
    accuracy, argmax, elu, loss, loss_from_logits, softmax_rows, weighted_loss, Activation, BatchNorm, Cache, Dense,
    DropoutMasks, Forward, Gradients, HiddenLayer, MlpModel, Mode, NormStats, BN_EPSILON,
    BN_MOMENTUM, LOG_EPSILON,
};
pub use scaler::Scaler;
pub use train::{one_hot, train, EpochRecord, Holdout, MlpConfig, TrainHistory};

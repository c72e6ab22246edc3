//! Analog DNN execution, a small SGD trainer, and data-based weight
//! normalization for conversion.

mod forward;
mod normalize;
mod train;

use thiserror::Error;

use crate::model_io::ModelError;

pub use forward::{
    accuracy, argmax, avgpool_accumulate, conv_accumulate, dense_accumulate, dnn_forward,
    layer_forward, predict, predict_all, relu_in_place, ForwardTrace,
};
pub use normalize::{
    nearest_rank_percentile, normalize_model, record_activations, ActivationTrace, LayerTrace,
    SCALE_FLOOR,
};
pub use train::{
    backprop, cross_entropy, gradient_check, init_params, train, Gradients, InitRule, TrainReport,
    TrainSettings, FD_STEP, REL_ERR_FLOOR,
};

#[derive(Debug, Error)]
pub enum DnnError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("input has {found} values, model expects {expected}")]
    InputShape { expected: usize, found: usize },
    #[error("non-finite training loss at epoch {epoch}, batch {batch} (learning rate too high?)")]
    Diverged { epoch: usize, batch: usize },
    #[error("invalid training settings: {0}")]
    Settings(String),
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("trace covers {trace} weighted layers, model has {model}")]
    TraceMismatch { model: usize, trace: usize },
}

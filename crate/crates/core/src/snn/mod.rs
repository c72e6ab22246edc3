//! Converted spiking networks and their time-stepped simulation.

mod evaluate;
mod network;
mod neuron;
mod simulate;

use thiserror::Error;

use crate::coding::CodingError;
use crate::model_io::ModelError;

pub use evaluate::{evaluate, EvalResult, EvalSettings};
pub use network::{bias_scale_for, convert, SnnNetwork, SnnState, SpikingLayer, Synapses};
pub use neuron::{fire_step, NeuronLayerState, NonFiniteInput, ResetMode};
pub use simulate::{
    classify_at, psp_step, simulate, ReadoutTrajectory, RecordConfig, SimOutput, SpikeRecord,
    SpikeTrain,
};

#[derive(Debug, Error)]
pub enum SnnError {
    #[error(transparent)]
    Coding(#[from] CodingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite input current {value} at layer {layer}, step {step}, neuron {neuron}")]
    NonFinite {
        layer: usize,
        step: usize,
        neuron: usize,
        value: f64,
    },
    #[error("input has {found} values, expected {expected}")]
    InputShape { expected: usize, found: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("failed to start worker pool: {0}")]
    Workers(String),
}

//! DNN-to-SNN conversion and time-stepped simulation with rate, phase and
//! burst neural coding.
//!
//! The pipeline is: train (or load) a [`model_io::LayeredModel`], normalize
//! its weights on calibration data ([`dnn::normalize_model`]), convert it to
//! a spiking network ([`snn::convert`]) with separate input and hidden coding
//! schemes, simulate ([`snn::evaluate`]) and measure ([`analysis`]).

pub mod analysis;
pub mod cli;
pub mod coding;
pub mod dnn;
pub mod model_io;
pub mod snn;

//! Measurement machinery: spike statistics, spiking density, the
//! proportional energy model and latency to a target accuracy.

mod metrics;
mod spikes;

use thiserror::Error;

pub use metrics::{
    latency_to_target, normalized_energy, spiking_density, EnergyProfile, OperatingPoint,
    RunMetrics, TargetResult, SIMPLEX_TOLERANCE, TARGET_TOLERANCE,
};
pub use spikes::{
    burst_composition, firing_stats, isi_histogram, isis, BurstComposition, FiringStats,
    IsiAccumulator, IsiHistogram, LayerAggregate, NeuronStats, BURST_BUCKETS,
};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("{0}")]
    Invalid(String),
    #[error("baseline {0} is zero; normalized energy is undefined")]
    ZeroBaseline(&'static str),
}

//! Run-level metrics: latency to a target accuracy, spiking density and the
//! proportional energy model.

use serde::{Deserialize, Serialize};

use super::AnalysisError;

/// Expected spikes per neuron per time step:
/// `spikes_per_image / (num_neurons · latency)`.
pub fn spiking_density(
    spikes_per_image: f64,
    num_neurons: usize,
    latency: usize,
) -> Result<f64, AnalysisError> {
    if num_neurons == 0 || latency == 0 {
        return Err(AnalysisError::Invalid(format!(
            "spiking density needs num_neurons >= 1 and latency >= 1 (got {num_neurons}, {latency})"
        )));
    }
    Ok(spikes_per_image / (num_neurons as f64 * latency as f64))
}

/// Slack for comparing an accuracy with a target, absorbing rounding in
/// derived targets such as `0.975 − 0.01`.
pub const TARGET_TOLERANCE: f64 = 1e-12;

/// First step `t` (1-based) with `accuracies[t − 1] ≥ target`.
pub fn latency_to_target(accuracies: &[f64], target: f64) -> Option<usize> {
    accuracies
        .iter()
        .position(|&a| a >= target - TARGET_TOLERANCE)
        .map(|i| i + 1)
}

/// Shares of total energy attributed to computation (∝ spikes), routing
/// (∝ spiking density) and static power (∝ latency).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub name: String,
    pub r_comp: f64,
    pub r_route: f64,
    pub r_static: f64,
}

pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

impl EnergyProfile {
    pub fn new(
        name: &str,
        r_comp: f64,
        r_route: f64,
        r_static: f64,
    ) -> Result<Self, AnalysisError> {
        let parts = [r_comp, r_route, r_static];
        if parts.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(AnalysisError::Invalid(format!(
                "energy profile `{name}`: ratios must be finite and >= 0, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(AnalysisError::Invalid(format!(
                "energy profile `{name}`: ratios sum to {sum}, expected 1"
            )));
        }
        if name.is_empty()
            || !name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(AnalysisError::Invalid(format!(
                "energy profile name `{name}` must be non-empty [A-Za-z0-9_-]"
            )));
        }
        Ok(EnergyProfile {
            name: name.to_string(),
            r_comp,
            r_route,
            r_static,
        })
    }

    /// The two built-in profiles. Their ratios are modelling assumptions and
    /// can be overridden from the configuration.
    pub fn defaults() -> Vec<EnergyProfile> {
        vec![
            EnergyProfile::new("truenorth-like", 0.15, 0.45, 0.40).expect("valid profile"),
            EnergyProfile::new("spinnaker-like", 0.30, 0.30, 0.40).expect("valid profile"),
        ]
    }
}

/// The three quantities the energy model scales with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Spikes per image up to the latency.
    pub spikes: f64,
    pub density: f64,
    pub latency: f64,
}

/// `E = r_c·S/S_b + r_r·D/D_b + r_s·L/L_b`, relative to a baseline run.
///
/// Evaluated as `Σ r_i x_i / Σ r_i`, which equals the formula for a simplex
/// profile and makes `E(baseline) = 1` and `E(½·baseline) = ½` exact in
/// floating point.
pub fn normalized_energy(
    point: &OperatingPoint,
    baseline: &OperatingPoint,
    profile: &EnergyProfile,
) -> Result<f64, AnalysisError> {
    let pairs = [
        ("spikes", point.spikes, baseline.spikes),
        ("spiking density", point.density, baseline.density),
        ("latency", point.latency, baseline.latency),
    ];
    for (what, _, b) in pairs {
        if !(b.is_finite() && b > 0.0) {
            return Err(AnalysisError::ZeroBaseline(what));
        }
    }
    let weights = [profile.r_comp, profile.r_route, profile.r_static];
    let mut num = 0.0;
    let mut den = 0.0;
    for ((_, x, b), r) in pairs.iter().zip(weights) {
        num += r * (x / b);
        den += r;
    }
    Ok(num / den)
}

/// Outcome for one target accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetResult {
    pub target: f64,
    /// `None` when the target was never reached within the horizon.
    pub latency: Option<usize>,
    /// Spikes per image at the latency (at the horizon when not reached).
    pub spikes_per_image: f64,
    pub density: f64,
}

impl TargetResult {
    pub fn reached(&self) -> bool {
        self.latency.is_some()
    }

    pub fn operating_point(&self) -> Option<OperatingPoint> {
        self.latency.map(|l| OperatingPoint {
            spikes: self.spikes_per_image,
            density: self.density,
            latency: l as f64,
        })
    }
}

/// Per-step accuracy and cumulative spike counts of one evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub samples: usize,
    pub num_neurons: usize,
    /// Accuracy after step `t` at index `t − 1`.
    pub accuracy: Vec<f64>,
    /// Cumulative spikes over the whole evaluation set after step `t`.
    pub cumulative_spikes: Vec<u64>,
}

impl RunMetrics {
    pub fn new(
        samples: usize,
        num_neurons: usize,
        accuracy: Vec<f64>,
        cumulative_spikes: Vec<u64>,
    ) -> Result<Self, AnalysisError> {
        if accuracy.len() != cumulative_spikes.len() || accuracy.is_empty() {
            return Err(AnalysisError::Invalid(format!(
                "curve lengths differ or are empty ({} accuracies, {} spike counts)",
                accuracy.len(),
                cumulative_spikes.len()
            )));
        }
        if cumulative_spikes.windows(2).any(|w| w[1] < w[0]) {
            return Err(AnalysisError::Invalid(
                "cumulative spike counts decrease".into(),
            ));
        }
        if samples == 0 || num_neurons == 0 {
            return Err(AnalysisError::Invalid(
                "samples and num_neurons must be >= 1".into(),
            ));
        }
        Ok(RunMetrics {
            samples,
            num_neurons,
            accuracy,
            cumulative_spikes,
        })
    }

    pub fn horizon(&self) -> usize {
        self.accuracy.len()
    }

    pub fn final_accuracy(&self) -> f64 {
        *self.accuracy.last().expect("non-empty curve")
    }

    pub fn spikes_per_image_at(&self, t: usize) -> f64 {
        self.cumulative_spikes[t - 1] as f64 / self.samples as f64
    }

    pub fn density_at(&self, t: usize) -> f64 {
        spiking_density(self.spikes_per_image_at(t), self.num_neurons, t)
            .expect("t >= 1, neurons >= 1")
    }

    pub fn at_target(&self, target: f64) -> TargetResult {
        let latency = latency_to_target(&self.accuracy, target);
        let t = latency.unwrap_or(self.horizon());
        TargetResult {
            target,
            latency,
            spikes_per_image: self.spikes_per_image_at(t),
            density: self.density_at(t),
        }
    }
}

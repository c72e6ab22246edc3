//! Time-stepped simulation of a converted network on one sample.
//!
//! Every step runs the input encoder, then each hidden layer in feed-forward
//! order (layer `l` consumes the spikes layer `l−1` emitted in the same step),
//! then adds the readout's PSP to its accumulators.

use crate::coding::{CodingKind, InputEncoder};
use crate::dnn::{argmax, dense_accumulate};

use super::network::{SnnNetwork, SpikingLayer};
use super::SnnError;

/// Which neurons get their spike times logged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecordConfig {
    /// Fraction of each population to sample; `0` disables recording.
    pub fraction: f64,
}

impl RecordConfig {
    pub fn none() -> Self {
        RecordConfig { fraction: 0.0 }
    }

    pub fn fraction(fraction: f64) -> Self {
        RecordConfig { fraction }
    }

    /// Every `stride`-th neuron of a population is sampled: `⌈1/f⌉`.
    pub fn stride(&self) -> Option<usize> {
        if self.fraction <= 0.0 {
            return None;
        }
        // tolerate representation error, e.g. 1/0.1 = 10.000000000000002
        Some(((1.0 / self.fraction) - 1e-9).ceil().max(1.0) as usize)
    }
}

/// Spike times (0-based step indices, strictly increasing) of one neuron.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeTrain {
    pub sample: usize,
    /// Population index: 0 is the input layer, `l ≥ 1` the l-th hidden layer.
    pub layer: usize,
    pub neuron: usize,
    pub times: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpikeRecord {
    pub fraction: f64,
    pub horizon: usize,
    pub trains: Vec<SpikeTrain>,
}

impl SpikeRecord {
    pub fn new(fraction: f64, horizon: usize) -> Self {
        SpikeRecord {
            fraction,
            horizon,
            trains: Vec::new(),
        }
    }

    /// Builds a record directly from spike-time lists (one per neuron, layer 1).
    pub fn from_trains(horizon: usize, trains: impl IntoIterator<Item = Vec<u32>>) -> Self {
        SpikeRecord {
            fraction: 1.0,
            horizon,
            trains: trains
                .into_iter()
                .enumerate()
                .map(|(neuron, times)| SpikeTrain {
                    sample: 0,
                    layer: 1,
                    neuron,
                    times,
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.trains.is_empty()
    }

    pub fn total_spikes(&self) -> usize {
        self.trains.iter().map(|t| t.times.len()).sum()
    }

    /// Trains of hidden populations only (the input layer excluded).
    pub fn hidden(&self) -> SpikeRecord {
        self.filter_layers(|l| l >= 1)
    }

    pub fn filter_layers(&self, keep: impl Fn(usize) -> bool) -> SpikeRecord {
        SpikeRecord {
            fraction: self.fraction,
            horizon: self.horizon,
            trains: self
                .trains
                .iter()
                .filter(|t| keep(t.layer))
                .cloned()
                .collect(),
        }
    }

    pub fn append(&mut self, other: SpikeRecord) {
        self.trains.extend(other.trains);
    }
}

/// Readout accumulators after each step; row `t − 1` holds the state after step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutTrajectory {
    pub classes: usize,
    pub values: Vec<f64>,
}

impl ReadoutTrajectory {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        ReadoutTrajectory {
            classes: rows.first().map_or(0, Vec::len),
            values: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.values.len().checked_div(self.classes).unwrap_or(0)
    }

    /// Accumulators after step `t` (1-based).
    pub fn at(&self, t: usize) -> &[f64] {
        assert!(
            t >= 1 && t <= self.steps(),
            "step {t} outside 1..={}",
            self.steps()
        );
        &self.values[(t - 1) * self.classes..t * self.classes]
    }
}

/// Predicted class after step `t` (1-based): argmax of the accumulators, ties
/// to the lowest class index.
pub fn classify_at(trajectory: &ReadoutTrajectory, t: usize) -> usize {
    argmax(trajectory.at(t))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub readout: ReadoutTrajectory,
    /// Spike counts `[population][step]`, population 0 being the input layer.
    pub layer_spikes: Vec<Vec<u32>>,
    pub record: SpikeRecord,
}

impl SimOutput {
    pub fn total_spikes(&self) -> u64 {
        self.layer_spikes
            .iter()
            .flatten()
            .map(|&c| u64::from(c))
            .sum()
    }

    pub fn hidden_spikes(&self) -> u64 {
        self.layer_spikes[1..]
            .iter()
            .flatten()
            .map(|&c| u64::from(c))
            .sum()
    }
}

/// Weighted PSP of `layer` given the presynaptic weighted spike vector.
pub fn psp_step(
    layer: &SpikingLayer,
    incoming: &[f64],
    bias_scale: f64,
    z: &mut [f64],
) -> Result<(), SnnError> {
    if z.len() != layer.len() {
        return Err(SnnError::InputShape {
            expected: layer.len(),
            found: z.len(),
        });
    }
    layer.synapses.psp(incoming, bias_scale, z);
    Ok(())
}

pub fn simulate(
    net: &SnnNetwork,
    sample: &[f64],
    time_steps: usize,
    record: &RecordConfig,
) -> Result<SimOutput, SnnError> {
    if sample.len() != net.input_len() {
        return Err(SnnError::InputShape {
            expected: net.input_len(),
            found: sample.len(),
        });
    }
    if time_steps == 0 {
        return Err(SnnError::Unsupported("time_steps must be >= 1".into()));
    }
    let mut encoder = InputEncoder::new(&net.input_scheme, sample)?;
    let mut state = net.fresh_state();
    let sizes = net.population_sizes();
    let burst = match net.hidden_scheme.kind {
        CodingKind::Burst { beta, g_cap } => Some((beta, g_cap)),
        _ => None,
    };

    let stride = record.stride();
    let mut trains: Vec<SpikeTrain> = Vec::new();
    // index of the first sampled train of each population
    let mut train_offsets = Vec::with_capacity(sizes.len());
    for (layer, &n) in sizes.iter().enumerate() {
        train_offsets.push(trains.len());
        if let Some(s) = stride {
            trains.extend((0..n).step_by(s).map(|neuron| SpikeTrain {
                sample: 0,
                layer,
                neuron,
                times: Vec::new(),
            }));
        }
    }

    let mut input = vec![0.0; net.input_len()];
    let mut z: Vec<Vec<f64>> = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
    let mut thresholds: Vec<Vec<f64>> = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
    let mut layer_spikes = vec![vec![0u32; time_steps]; sizes.len()];
    let mut readout_values = Vec::with_capacity(time_steps * net.num_classes());

    // Real-coded input is constant, so the first layer's PSP is too.
    let cached_first = if encoder.is_constant() && !net.layers.is_empty() {
        encoder.step(0, &mut input);
        let mut z0 = vec![0.0; net.layers[0].len()];
        psp_step(&net.layers[0], &input, net.bias_scale, &mut z0)?;
        Some(z0)
    } else {
        None
    };

    let mut readout_in = vec![0.0; net.num_classes()];
    // `t` also indexes the per-layer spike counts and names the step
    #[allow(clippy::needless_range_loop)]
    for t in 0..time_steps {
        let tt = t as u64;
        let input_count = if cached_first.is_some() {
            0
        } else {
            encoder.step(tt, &mut input)
        };
        layer_spikes[0][t] = input_count as u32;
        if let Some(s) = stride {
            if input_count > 0 {
                let base = train_offsets[0];
                for (k, neuron) in (0..sizes[0]).step_by(s).enumerate() {
                    if input[neuron] != 0.0 {
                        trains[base + k].times.push(t as u32);
                    }
                }
            }
        }

        for (li, layer) in net.layers.iter().enumerate() {
            match (li, &cached_first) {
                (0, Some(z0)) => z[0].copy_from_slice(z0),
                (0, None) => psp_step(layer, &input, net.bias_scale, &mut z[0])?,
                _ => psp_step(
                    layer,
                    &state.layers[li - 1].emitted_weight,
                    net.bias_scale,
                    &mut z[li],
                )?,
            }
            let ls = &mut state.layers[li];
            layer
                .scheme
                .threshold_into(tt, ls.burst.as_ref(), &mut thresholds[li])?;
            let count =
                ls.fire(&z[li], &thresholds[li], net.reset)
                    .map_err(|e| SnnError::NonFinite {
                        layer: li + 1,
                        step: t,
                        neuron: e.neuron,
                        value: e.value,
                    })?;
            if let (Some((beta, cap)), Some(b)) = (burst, ls.burst.as_mut()) {
                b.update(&ls.spiked, beta, cap);
            }
            layer_spikes[li + 1][t] = count as u32;
            if let Some(s) = stride {
                if count > 0 {
                    let base = train_offsets[li + 1];
                    for (k, neuron) in (0..sizes[li + 1]).step_by(s).enumerate() {
                        if ls.spiked[neuron] {
                            trains[base + k].times.push(t as u32);
                        }
                    }
                }
            }
        }

        let last: &[f64] = match state.layers.last() {
            Some(l) => &l.emitted_weight,
            None => &input,
        };
        for (r, b) in readout_in.iter_mut().zip(&net.readout.bias) {
            *r = b * net.bias_scale;
        }
        dense_accumulate(&net.readout, last, &mut readout_in);
        for (acc, v) in state.readout.iter_mut().zip(&readout_in) {
            *acc += v;
        }
        readout_values.extend_from_slice(&state.readout);
    }

    Ok(SimOutput {
        readout: ReadoutTrajectory {
            classes: net.num_classes(),
            values: readout_values,
        },
        layer_spikes,
        record: SpikeRecord {
            fraction: record.fraction,
            horizon: time_steps,
            trains,
        },
    })
}

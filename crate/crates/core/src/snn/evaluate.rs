//! Evaluation of a converted network over a labelled set.
//!
//! Samples are simulated independently on a worker pool; per-sample results
//! are collected in sample order and reduced serially, so every aggregate is
//! independent of the number of workers.

use rayon::prelude::*;

use super::network::SnnNetwork;
use super::simulate::{classify_at, simulate, RecordConfig, SpikeRecord};
use super::SnnError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    pub time_steps: usize,
    pub record: RecordConfig,
    /// Worker threads; `0` uses the global pool.
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub samples: usize,
    pub time_steps: usize,
    /// Correctly classified samples after each step (index `t − 1`).
    pub correct: Vec<u64>,
    /// Spikes per step summed over samples, `[population][step]`.
    pub layer_spikes: Vec<Vec<u64>>,
    pub record: SpikeRecord,
    pub num_neurons: usize,
}

impl EvalResult {
    pub fn accuracy_curve(&self) -> Vec<f64> {
        let n = self.samples.max(1) as f64;
        self.correct.iter().map(|&c| c as f64 / n).collect()
    }

    /// Accuracy after step `t` (1-based).
    pub fn accuracy_at(&self, t: usize) -> f64 {
        self.correct[t - 1] as f64 / self.samples.max(1) as f64
    }

    fn cumulative(&self, populations: std::ops::Range<usize>) -> Vec<u64> {
        let mut acc = 0;
        (0..self.time_steps)
            .map(|t| {
                acc += self.layer_spikes[populations.clone()]
                    .iter()
                    .map(|l| l[t])
                    .sum::<u64>();
                acc
            })
            .collect()
    }

    /// Cumulative spikes of all populations (input and hidden) over the set.
    pub fn cumulative_spikes(&self) -> Vec<u64> {
        self.cumulative(0..self.layer_spikes.len())
    }

    /// Cumulative spikes of the hidden populations only.
    pub fn cumulative_hidden_spikes(&self) -> Vec<u64> {
        self.cumulative(1..self.layer_spikes.len())
    }
}

struct SampleOutcome {
    correct: Vec<bool>,
    layer_spikes: Vec<Vec<u32>>,
    record: SpikeRecord,
}

fn run_one(
    net: &SnnNetwork,
    index: usize,
    image: &[f64],
    label: usize,
    settings: &EvalSettings,
) -> Result<SampleOutcome, SnnError> {
    let out = simulate(net, image, settings.time_steps, &settings.record)?;
    let correct = (1..=settings.time_steps)
        .map(|t| classify_at(&out.readout, t) == label)
        .collect();
    let mut record = out.record;
    for tr in record.trains.iter_mut() {
        tr.sample = index;
    }
    Ok(SampleOutcome {
        correct,
        layer_spikes: out.layer_spikes,
        record,
    })
}

pub fn evaluate(
    net: &SnnNetwork,
    images: &[Vec<f64>],
    labels: &[usize],
    settings: &EvalSettings,
) -> Result<EvalResult, SnnError> {
    if images.len() != labels.len() {
        return Err(SnnError::InputShape {
            expected: images.len(),
            found: labels.len(),
        });
    }
    let work = || -> Result<Vec<SampleOutcome>, SnnError> {
        images
            .par_iter()
            .zip(labels.par_iter())
            .enumerate()
            .map(|(i, (x, &y))| run_one(net, i, x, y, settings))
            .collect()
    };
    let outcomes = if settings.workers == 0 {
        work()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(settings.workers)
            .build()
            .map_err(|e| SnnError::Workers(e.to_string()))?
            .install(work)?
    };

    let populations = net.population_sizes().len();
    let mut result = EvalResult {
        samples: images.len(),
        time_steps: settings.time_steps,
        correct: vec![0; settings.time_steps],
        layer_spikes: vec![vec![0; settings.time_steps]; populations],
        record: SpikeRecord::new(settings.record.fraction, settings.time_steps),
        num_neurons: net.num_neurons(),
    };
    for o in outcomes {
        for (c, ok) in result.correct.iter_mut().zip(o.correct) {
            *c += u64::from(ok);
        }
        for (acc, counts) in result.layer_spikes.iter_mut().zip(&o.layer_spikes) {
            for (a, &c) in acc.iter_mut().zip(counts) {
                *a += u64::from(c);
            }
        }
        result.record.append(o.record);
    }
    Ok(result)
}

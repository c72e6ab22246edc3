//! Spike-train statistics: ISI histograms, burst composition and firing
//! rate/regularity.

use std::collections::BTreeMap;

use crate::snn::SpikeRecord;

/// Inter-spike intervals of one train.
pub fn isis(times: &[u32]) -> impl Iterator<Item = u32> + '_ {
    times.windows(2).map(|w| w[1] - w[0])
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IsiHistogram {
    pub bin_width: u32,
    /// Lower bin edge → count. With `bin_width = 1` the key is the ISI itself.
    pub counts: BTreeMap<u32, u64>,
    /// No sampled neuron had two or more spikes.
    pub empty: bool,
}

impl IsiHistogram {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Share of all ISIs in the bin starting at `edge`.
    pub fn mass(&self, edge: u32) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.counts.get(&edge).copied().unwrap_or(0) as f64 / total as f64
    }
}

/// Pooled ISI histogram. Bins are `[1 + m·w, 1 + (m+1)·w)` keyed by their
/// lower edge.
pub fn isi_histogram(record: &SpikeRecord, bin_width: u32) -> IsiHistogram {
    let w = bin_width.max(1);
    let mut counts = BTreeMap::new();
    for train in &record.trains {
        for isi in isis(&train.times) {
            let edge = 1 + ((isi - 1) / w) * w;
            *counts.entry(edge).or_insert(0) += 1;
        }
    }
    IsiHistogram {
        bin_width: w,
        empty: counts.is_empty(),
        counts,
    }
}

/// Bucket labels used for burst lengths: 1 (isolated), 2, 3, 4, and ≥5.
pub const BURST_BUCKETS: [&str; 5] = ["1", "2", "3", "4", ">=5"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BurstComposition {
    pub total_spikes: u64,
    /// Spikes belonging to runs of length ≥ 2.
    pub burst_spikes: u64,
    /// Exact run length → number of runs.
    pub runs: BTreeMap<u32, u64>,
}

impl BurstComposition {
    pub fn burst_fraction(&self) -> f64 {
        if self.total_spikes == 0 {
            0.0
        } else {
            self.burst_spikes as f64 / self.total_spikes as f64
        }
    }

    /// Spikes per bucket of [`BURST_BUCKETS`].
    pub fn bucket_spikes(&self) -> [u64; 5] {
        let mut out = [0; 5];
        for (&len, &n) in &self.runs {
            let b = (len.min(5) - 1) as usize;
            out[b] += u64::from(len) * n;
        }
        out
    }

    /// Number of runs per length bucket 2, 3, 4, ≥5.
    pub fn bucket_runs(&self) -> [u64; 4] {
        let mut out = [0; 4];
        for (&len, &n) in &self.runs {
            if len >= 2 {
                out[(len.min(5) - 2) as usize] += n;
            }
        }
        out
    }
}

/// Splits every train into maximal runs of spikes at consecutive steps.
pub fn burst_composition(record: &SpikeRecord) -> BurstComposition {
    let mut c = BurstComposition::default();
    for train in &record.trains {
        let mut run = 0u32;
        let mut prev: Option<u32> = None;
        for &t in &train.times {
            run = match prev {
                Some(p) if t == p + 1 => run + 1,
                _ => {
                    close_run(&mut c, run);
                    1
                }
            };
            prev = Some(t);
        }
        close_run(&mut c, run);
    }
    c
}

fn close_run(c: &mut BurstComposition, run: u32) {
    if run == 0 {
        return;
    }
    c.total_spikes += u64::from(run);
    if run >= 2 {
        c.burst_spikes += u64::from(run);
    }
    *c.runs.entry(run).or_insert(0) += 1;
}

/// Mergeable ISI moments of one neuron. Integer sums keep merging exact and
/// order-independent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IsiAccumulator {
    pub spikes: u64,
    pub n: u64,
    pub sum: u64,
    pub sum_sq: u64,
}

impl IsiAccumulator {
    pub fn from_times(times: &[u32]) -> Self {
        let mut a = IsiAccumulator {
            spikes: times.len() as u64,
            ..Default::default()
        };
        for i in isis(times) {
            a.push(i);
        }
        a
    }

    pub fn from_isis(values: &[u32]) -> Self {
        let mut a = IsiAccumulator::default();
        for &i in values {
            a.push(i);
        }
        a.spikes = a.n + 1;
        a
    }

    fn push(&mut self, isi: u32) {
        let i = u64::from(isi);
        self.n += 1;
        self.sum += i;
        self.sum_sq += i * i;
    }

    pub fn merge(&mut self, other: &IsiAccumulator) {
        self.spikes += other.spikes;
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    /// `λ = n / Σ I`, spikes per time step; `None` without any ISI.
    pub fn rate(&self) -> Option<f64> {
        (self.n > 0).then(|| self.n as f64 / self.sum as f64)
    }

    /// Coefficient of variation `κ = σ(I)/μ(I)` with the population standard
    /// deviation; `None` with fewer than two ISIs.
    pub fn regularity(&self) -> Option<f64> {
        if self.n < 2 {
            return None;
        }
        // n·ΣI² − (ΣI)² is exact in i128 and non-negative
        let n = i128::from(self.n);
        let s = i128::from(self.sum);
        let numer = n * i128::from(self.sum_sq) - s * s;
        Some((numer as f64).sqrt() / s as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronStats {
    pub layer: usize,
    pub neuron: usize,
    pub acc: IsiAccumulator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerAggregate {
    pub layer: usize,
    /// Neurons with at least two ISIs.
    pub neurons: usize,
    pub mean_log10_rate: f64,
    pub mean_regularity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiringStats {
    /// One entry per sampled neuron, ISIs pooled over samples (never across
    /// sample boundaries), ordered by (layer, neuron).
    pub neurons: Vec<NeuronStats>,
    pub layers: Vec<LayerAggregate>,
}

pub fn firing_stats(record: &SpikeRecord) -> FiringStats {
    let mut per: BTreeMap<(usize, usize), IsiAccumulator> = BTreeMap::new();
    for train in &record.trains {
        per.entry((train.layer, train.neuron))
            .or_default()
            .merge(&IsiAccumulator::from_times(&train.times));
    }
    let neurons: Vec<NeuronStats> = per
        .into_iter()
        .map(|((layer, neuron), acc)| NeuronStats { layer, neuron, acc })
        .collect();

    let mut by_layer: BTreeMap<usize, (usize, f64, f64)> = BTreeMap::new();
    for s in &neurons {
        if let (Some(rate), Some(k)) = (s.acc.rate(), s.acc.regularity()) {
            let e = by_layer.entry(s.layer).or_insert((0, 0.0, 0.0));
            e.0 += 1;
            e.1 += rate.log10();
            e.2 += k;
        }
    }
    let layers = by_layer
        .into_iter()
        .map(|(layer, (n, sum_log, sum_k))| LayerAggregate {
            layer,
            neurons: n,
            mean_log10_rate: sum_log / n as f64,
            mean_regularity: sum_k / n as f64,
        })
        .collect();
    FiringStats { neurons, layers }
}

//! Data-based, outlier-robust weight normalization.
//!
//! Each weighted layer `l` gets a scale `λ^l`: the p-th percentile
//! (nearest rank) of its rectified outputs over a calibration set. The
//! normalized parameters are `w^l · λ^{l−1} / λ^l` and `b^l / λ^l`, with
//! `λ^0 = 1` for the input. Pooling and ReLU layers carry no scale and pass
//! the previous one through.

use rayon::prelude::*;

use crate::model_io::LayeredModel;

use super::forward::dnn_forward;
use super::DnnError;

/// Lower clamp for a layer scale (all-zero activations).
pub const SCALE_FLOOR: f64 = f64::EPSILON;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    /// Index of the weighted layer in `LayeredModel::layers`.
    pub layer_index: usize,
    /// Rectified outputs pooled over the calibration set (order unspecified).
    pub activations: Vec<f64>,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub percentile: f64,
    pub layers: Vec<LayerTrace>,
}

impl ActivationTrace {
    pub fn scales(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.scale).collect()
    }
}

/// Nearest-rank percentile: the value of rank `⌈p/100 · n⌉` in ascending
/// order. Reorders `values`. Returns `None` for an empty slice.
pub fn nearest_rank_percentile(values: &mut [f64], p: f64) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let exact = p / 100.0 * n as f64;
    // absorb decimal representation error in p (e.g. 99.9/100·1000 = 999.0000000000001)
    let rank = (exact - exact.max(1.0) * 1e-12).ceil().clamp(1.0, n as f64) as usize;
    let (_, v, _) = values.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Some(*v)
}

pub fn record_activations(
    model: &LayeredModel,
    calib: &[Vec<f64>],
    percentile: f64,
) -> Result<ActivationTrace, DnnError> {
    if calib.is_empty() {
        return Err(DnnError::EmptyCalibration);
    }
    model.validate()?;
    let weighted = model.weighted_layer_indices();

    let per_chunk: Vec<Vec<Vec<f64>>> = calib
        .par_chunks(256)
        .map(|chunk| {
            let mut acc: Vec<Vec<f64>> = vec![Vec::new(); weighted.len()];
            for x in chunk {
                let trace = dnn_forward(model, x)?;
                for (slot, &li) in acc.iter_mut().zip(&weighted) {
                    slot.extend(trace.activations[li].iter().map(|&a| a.max(0.0)));
                }
            }
            Ok(acc)
        })
        .collect::<Result<_, DnnError>>()?;

    let mut layers = Vec::with_capacity(weighted.len());
    for (k, &layer_index) in weighted.iter().enumerate() {
        let mut activations: Vec<f64> = per_chunk
            .iter()
            .flat_map(|c| c[k].iter().copied())
            .collect();
        let raw = nearest_rank_percentile(&mut activations, percentile).unwrap_or(0.0);
        let scale = if raw < SCALE_FLOOR {
            log::warn!(
                "layer {layer_index}: percentile activation {raw} below floor; clamping scale to {SCALE_FLOOR:e}"
            );
            SCALE_FLOOR
        } else {
            raw
        };
        layers.push(LayerTrace {
            layer_index,
            activations,
            scale,
        });
    }
    Ok(ActivationTrace { percentile, layers })
}

pub fn normalize_model(
    model: &LayeredModel,
    trace: &ActivationTrace,
) -> Result<LayeredModel, DnnError> {
    let weighted = model.weighted_layer_indices();
    if weighted.len() != trace.layers.len()
        || weighted
            .iter()
            .zip(&trace.layers)
            .any(|(&i, t)| i != t.layer_index)
    {
        return Err(DnnError::TraceMismatch {
            model: weighted.len(),
            trace: trace.layers.len(),
        });
    }
    let mut out = model.clone();
    let mut previous = 1.0;
    for t in &trace.layers {
        let (w, b) = out.layers[t.layer_index]
            .params_mut()
            .expect("weighted layer");
        let w_factor = previous / t.scale;
        for v in w.iter_mut() {
            *v *= w_factor;
        }
        for v in b.iter_mut() {
            *v /= t.scale;
        }
        previous = t.scale;
    }
    Ok(out)
}

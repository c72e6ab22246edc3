//! Reference (analog) execution of a [`LayeredModel`].
//!
//! The `*_accumulate` kernels add a layer's linear response into `out`
//! without the bias. They skip zero inputs, which makes them suitable for
//! sparse spike vectors as well as dense activations.

use rayon::prelude::*;

use crate::model_io::{AvgPoolLayer, Conv2dLayer, DenseLayer, LayerSpec, LayeredModel, Shape};

use super::DnnError;

/// `out[j] += Σ_i x[i] · w[i][j]`
pub fn dense_accumulate(layer: &DenseLayer, x: &[f64], out: &mut [f64]) {
    let n = layer.out_dim;
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &layer.weights[i * n..(i + 1) * n];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xi * w;
        }
    }
}

/// Cross-correlation scattered from each non-zero input position.
pub fn conv_accumulate(layer: &Conv2dLayer, x: &[f64], out: &mut [f64]) {
    let out_shape = layer.output_shape();
    let (pad_top, pad_left) = layer.pad_before();
    let (in_w, in_c, out_c) = (layer.in_w, layer.in_c, layer.out_c);
    for (idx, &v) in x.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let ci = idx % in_c;
        let px = (idx / in_c) % in_w;
        let py = idx / (in_c * in_w);
        for ky in 0..layer.k_h {
            let Some(oy) = output_coord(py, ky, pad_top, layer.stride, out_shape.h) else {
                continue;
            };
            for kx in 0..layer.k_w {
                let Some(ox) = output_coord(px, kx, pad_left, layer.stride, out_shape.w) else {
                    continue;
                };
                let w0 = layer.weight_index(ky, kx, ci, 0);
                let o0 = (oy * out_shape.w + ox) * out_c;
                let weights = &layer.weights[w0..w0 + out_c];
                for (o, &w) in out[o0..o0 + out_c].iter_mut().zip(weights) {
                    *o += v * w;
                }
            }
        }
    }
}

/// Output coordinate receiving input coordinate `p` through kernel offset `k`,
/// i.e. the `o` with `o·stride + k − pad = p`.
#[inline]
pub(crate) fn output_coord(
    p: usize,
    k: usize,
    pad: usize,
    stride: usize,
    extent: usize,
) -> Option<usize> {
    let shifted = (p + pad).checked_sub(k)?;
    if shifted % stride != 0 {
        return None;
    }
    let o = shifted / stride;
    (o < extent).then_some(o)
}

pub fn avgpool_accumulate(layer: &AvgPoolLayer, input: Shape, x: &[f64], out: &mut [f64]) {
    let os = layer.output_shape(input);
    let scale = 1.0 / (layer.window * layer.window) as f64;
    for oy in 0..os.h {
        for ox in 0..os.w {
            let o0 = (oy * os.w + ox) * os.c;
            for dy in 0..layer.window {
                let y = oy * layer.stride + dy;
                for dx in 0..layer.window {
                    let xx = ox * layer.stride + dx;
                    let i0 = (y * input.w + xx) * input.c;
                    for c in 0..os.c {
                        out[o0 + c] += x[i0 + c] * scale;
                    }
                }
            }
        }
    }
}

pub fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Applies one layer to `x` (whose shape is `input`).
pub fn layer_forward(layer: &LayerSpec, input: Shape, x: &[f64]) -> Vec<f64> {
    match layer {
        LayerSpec::Dense(d) => {
            let mut out = d.bias.clone();
            dense_accumulate(d, x, &mut out);
            out
        }
        LayerSpec::Conv2d(c) => {
            let os = c.output_shape();
            let mut out: Vec<f64> = (0..os.h * os.w)
                .flat_map(|_| c.bias.iter().copied())
                .collect();
            conv_accumulate(c, x, &mut out);
            out
        }
        LayerSpec::Avgpool(p) => {
            let mut out = vec![0.0; p.output_shape(input).len()];
            avgpool_accumulate(p, input, x, &mut out);
            out
        }
        LayerSpec::Relu => {
            let mut out = x.to_vec();
            relu_in_place(&mut out);
            out
        }
    }
}

/// Every layer's output for one sample; the last entry holds the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

pub fn dnn_forward(model: &LayeredModel, input: &[f64]) -> Result<ForwardTrace, DnnError> {
    if input.len() != model.input_shape.len() {
        return Err(DnnError::InputShape {
            expected: model.input_shape.len(),
            found: input.len(),
        });
    }
    let shapes = model.layer_shapes()?;
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(model.layers.len());
    let mut shape = model.input_shape;
    for (layer, out_shape) in model.layers.iter().zip(&shapes) {
        let x = activations.last().map(|v| v.as_slice()).unwrap_or(input);
        let y = layer_forward(layer, shape, x);
        activations.push(y);
        shape = *out_shape;
    }
    Ok(ForwardTrace { activations })
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(model: &LayeredModel, input: &[f64]) -> Result<usize, DnnError> {
    Ok(argmax(dnn_forward(model, input)?.logits()))
}

/// Predictions for every sample, computed in parallel and returned in input order.
pub fn predict_all(model: &LayeredModel, inputs: &[Vec<f64>]) -> Result<Vec<usize>, DnnError> {
    inputs.par_iter().map(|x| predict(model, x)).collect()
}

pub fn accuracy(
    model: &LayeredModel,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> Result<f64, DnnError> {
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let preds = predict_all(model, inputs)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / inputs.len() as f64)
}

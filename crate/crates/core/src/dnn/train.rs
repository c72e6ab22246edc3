//! Minibatch SGD on softmax cross-entropy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model_io::{Dataset, LayerSpec, LayeredModel, Shape};

use super::forward::{dnn_forward, output_coord, predict_all};
use super::DnnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitRule {
    /// `U(−√(6/fan_in), √(6/fan_in))` weights, zero biases.
    UniformFanin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init: InitRule,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            init: InitRule::UniformFanin,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<(), DnnError> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(DnnError::Settings(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(DnnError::Settings(
                "epochs and batch size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch (accumulated during the epoch).
    pub epoch_losses: Vec<f64>,
    pub final_train_accuracy: f64,
}

fn fan_in(layer: &LayerSpec) -> usize {
    match layer {
        LayerSpec::Dense(d) => d.in_dim,
        LayerSpec::Conv2d(c) => c.k_h * c.k_w * c.in_c,
        _ => 0,
    }
}

/// Re-initializes all parameters with the uniform fan-in rule.
pub fn init_params(model: &mut LayeredModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in model.layers.iter_mut() {
        let limit = (6.0 / fan_in(layer).max(1) as f64).sqrt();
        if let Some((w, b)) = layer.params_mut() {
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
            b.fill(0.0);
        }
    }
}

/// Per-layer gradient buffers, `None` for parameter-free layers.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Gradients {
    pub fn zeros_like(model: &LayeredModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| {
                    l.params()
                        .map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()]))
                })
                .collect(),
        }
    }

    fn clear(&mut self) {
        for (w, b) in self.layers.iter_mut().flatten() {
            w.fill(0.0);
            b.fill(0.0);
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy of `logits` against class `label`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Adds the gradient of the loss for one sample into `grads`; returns the loss.
pub fn backprop(
    model: &LayeredModel,
    shapes: &[Shape],
    input: &[f64],
    label: usize,
    grads: &mut Gradients,
) -> Result<f64, DnnError> {
    let trace = dnn_forward(model, input)?;
    let logits = trace.logits();
    let loss = cross_entropy(logits, label);
    let mut delta = softmax(logits);
    delta[label] -= 1.0;

    for index in (0..model.layers.len()).rev() {
        let x: &[f64] = if index == 0 {
            input
        } else {
            &trace.activations[index - 1]
        };
        let in_shape = if index == 0 {
            model.input_shape
        } else {
            shapes[index - 1]
        };
        let need_dx = index > 0;
        delta = match &model.layers[index] {
            LayerSpec::Dense(d) => {
                let (gw, gb) = grads.layers[index].as_mut().expect("dense gradients");
                let n = d.out_dim;
                for (g, dj) in gb.iter_mut().zip(&delta) {
                    *g += dj;
                }
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (g, dj) in gw[i * n..(i + 1) * n].iter_mut().zip(&delta) {
                        *g += xi * dj;
                    }
                }
                if need_dx {
                    (0..d.in_dim)
                        .map(|i| {
                            d.weights[i * n..(i + 1) * n]
                                .iter()
                                .zip(&delta)
                                .map(|(w, dj)| w * dj)
                                .sum()
                        })
                        .collect()
                } else {
                    Vec::new()
                }
            }
            LayerSpec::Conv2d(c) => {
                let (gw, gb) = grads.layers[index].as_mut().expect("conv gradients");
                let os = c.output_shape();
                let (pt, pl) = c.pad_before();
                for pos in 0..os.h * os.w {
                    for (g, dj) in gb
                        .iter_mut()
                        .zip(&delta[pos * c.out_c..(pos + 1) * c.out_c])
                    {
                        *g += dj;
                    }
                }
                let mut dx = vec![0.0; if need_dx { x.len() } else { 0 }];
                for idx in 0..x.len() {
                    let ci = idx % c.in_c;
                    let px = (idx / c.in_c) % c.in_w;
                    let py = idx / (c.in_c * c.in_w);
                    for ky in 0..c.k_h {
                        let Some(oy) = output_coord(py, ky, pt, c.stride, os.h) else {
                            continue;
                        };
                        for kx in 0..c.k_w {
                            let Some(ox) = output_coord(px, kx, pl, c.stride, os.w) else {
                                continue;
                            };
                            let w0 = c.weight_index(ky, kx, ci, 0);
                            let o0 = (oy * os.w + ox) * c.out_c;
                            let d_out = &delta[o0..o0 + c.out_c];
                            let xv = x[idx];
                            let mut acc = 0.0;
                            for co in 0..c.out_c {
                                gw[w0 + co] += xv * d_out[co];
                                acc += c.weights[w0 + co] * d_out[co];
                            }
                            if need_dx {
                                dx[idx] += acc;
                            }
                        }
                    }
                }
                dx
            }
            LayerSpec::Avgpool(p) => {
                let os = p.output_shape(in_shape);
                let scale = 1.0 / (p.window * p.window) as f64;
                let mut dx = vec![0.0; in_shape.len()];
                for oy in 0..os.h {
                    for ox in 0..os.w {
                        for dy in 0..p.window {
                            for dxx in 0..p.window {
                                let i0 = ((oy * p.stride + dy) * in_shape.w + ox * p.stride + dxx)
                                    * in_shape.c;
                                let o0 = (oy * os.w + ox) * os.c;
                                for c in 0..os.c {
                                    dx[i0 + c] += delta[o0 + c] * scale;
                                }
                            }
                        }
                    }
                }
                dx
            }
            LayerSpec::Relu => delta
                .iter()
                .zip(x)
                .map(|(d, &pre)| if pre > 0.0 { *d } else { 0.0 })
                .collect(),
        };
    }
    Ok(loss)
}

/// Batch-sequential SGD; deterministic given the seed.
///
/// Parameters are used as given; call [`init_params`] first for a fresh model.
pub fn train(
    model: &LayeredModel,
    data: &Dataset,
    settings: &TrainSettings,
) -> Result<(LayeredModel, TrainReport), DnnError> {
    settings.validate()?;
    model.validate()?;
    let classes = model.num_classes();
    if let Some((index, &label)) = data.labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(DnnError::Settings(format!(
            "label {label} at index {index} exceeds classifier width {classes}"
        )));
    }
    if data.is_empty() {
        return Err(DnnError::Settings("training set is empty".into()));
    }
    let shapes = model.layer_shapes()?;
    let mut model = model.clone();
    let mut grads = Gradients::zeros_like(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..settings.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(settings.batch_size).enumerate() {
            grads.clear();
            let mut batch_loss = 0.0;
            for &s in batch {
                batch_loss +=
                    backprop(&model, &shapes, &data.images[s], data.labels[s], &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(DnnError::Diverged {
                    epoch,
                    batch: batch_index,
                });
            }
            epoch_loss += batch_loss;
            let step = settings.learning_rate / batch.len() as f64;
            for (layer, g) in model.layers.iter_mut().zip(&grads.layers) {
                if let (Some((w, b)), Some((gw, gb))) = (layer.params_mut(), g) {
                    for (p, d) in w.iter_mut().zip(gw).chain(b.iter_mut().zip(gb)) {
                        *p -= step * d;
                    }
                }
            }
        }
        let mean = epoch_loss / data.len() as f64;
        log::info!("epoch {}: mean loss {mean:.6}", epoch + 1);
        report.epoch_losses.push(mean);
    }
    let preds = predict_all(&model, &data.images)?;
    let correct = preds
        .iter()
        .zip(&data.labels)
        .filter(|(p, l)| p == l)
        .count();
    report.final_train_accuracy = correct as f64 / data.len() as f64;
    Ok((model, report))
}

/// Step used by [`gradient_check`] for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Floor on the denominator of the relative error, so gradients that are
/// zero up to round-off compare as equal.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Parameter `k` of layer `index`, counting weights first, then biases.
fn param_at(model: &LayeredModel, index: usize, k: usize) -> f64 {
    let (w, b) = model.layers[index].params().expect("weighted layer");
    if k < w.len() {
        w[k]
    } else {
        b[k - w.len()]
    }
}

fn set_param(model: &mut LayeredModel, index: usize, k: usize, value: f64) {
    let (w, b) = model.layers[index].params_mut().expect("weighted layer");
    if k < w.len() {
        w[k] = value;
    } else {
        let n = w.len();
        b[k - n] = value;
    }
}

/// Max over all parameters of `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(model: &LayeredModel, input: &[f64], label: usize) -> Result<f64, DnnError> {
    model.validate()?;
    let shapes = model.layer_shapes()?;
    let mut grads = Gradients::zeros_like(model);
    backprop(model, &shapes, input, label, &mut grads)?;

    let loss_at = |m: &LayeredModel| -> Result<f64, DnnError> {
        Ok(cross_entropy(dnn_forward(m, input)?.logits(), label))
    };
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (index, g) in grads.layers.iter().enumerate() {
        let Some((gw, gb)) = g else { continue };
        for (k, &analytic) in gw.iter().chain(gb).enumerate() {
            let original = param_at(model, index, k);
            set_param(&mut probe, index, k, original + FD_STEP);
            let plus = loss_at(&probe)?;
            set_param(&mut probe, index, k, original - FD_STEP);
            let minus = loss_at(&probe)?;
            set_param(&mut probe, index, k, original);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::{Conv2dLayer, DenseLayer, Padding, Split};
    use proptest::prelude::*;
    use rand::Rng;

    fn rand_input(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn mlp_4_8_3_gradients() {
        for seed in 0..5 {
            let mut m = LayeredModel::mlp(&[4, 8, 3]);
            init_params(&mut m, seed);
            for layer in m.layers.iter_mut() {
                if let Some((_, b)) = layer.params_mut() {
                    b.iter_mut()
                        .enumerate()
                        .for_each(|(i, v)| *v = 0.1 * (i as f64 - 1.0));
                }
            }
            let err = gradient_check(&m, &rand_input(4, seed + 100), (seed % 3) as usize).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_model_zero_input() {
        let m = LayeredModel::mlp(&[4, 8, 3]);
        let shapes = m.layer_shapes().unwrap();
        let mut g = Gradients::zeros_like(&m);
        backprop(&m, &shapes, &[0.0; 4], 1, &mut g).unwrap();
        let (gw, _) = g.layers[0].as_ref().unwrap();
        assert!(gw.iter().all(|&v| v == 0.0));
        assert!(gradient_check(&m, &[0.0; 4], 1).unwrap() < 1e-4);
    }

    fn conv_toy(seed: u64) -> LayeredModel {
        let conv = Conv2dLayer::zeros(Shape::new(5, 5, 1), 2, (3, 3), 1, Padding::Same);
        let out = conv.output_shape();
        let mut m = LayeredModel::new(
            Shape::new(5, 5, 1),
            vec![
                LayerSpec::Conv2d(conv),
                LayerSpec::Relu,
                LayerSpec::Avgpool(crate::model_io::AvgPoolLayer {
                    window: 2,
                    stride: 1,
                }),
                LayerSpec::Dense(DenseLayer::zeros(4 * 4 * out.c, 3)),
            ],
        );
        init_params(&mut m, seed);
        m
    }

    #[test]
    fn conv_toy_gradients() {
        for seed in 0..3 {
            let m = conv_toy(seed);
            let err = gradient_check(&m, &rand_input(25, seed + 7), 2).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
        // strided valid conv
        let conv = Conv2dLayer::zeros(Shape::new(6, 6, 2), 3, (2, 2), 2, Padding::Valid);
        let mut m = LayeredModel::new(
            Shape::new(6, 6, 2),
            vec![
                LayerSpec::Conv2d(conv),
                LayerSpec::Relu,
                LayerSpec::Dense(DenseLayer::zeros(27, 2)),
            ],
        );
        init_params(&mut m, 11);
        assert!(gradient_check(&m, &rand_input(72, 12), 0).unwrap() < 1e-4);
    }

    /// Two Gaussian-free blobs separable by the line x0 = x1.
    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        while images.len() < n {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            if (a - b).abs() < 0.1 {
                continue;
            }
            labels.push(usize::from(a > b));
            images.push(vec![a, b]);
        }
        Dataset {
            images,
            labels,
            rows: 1,
            cols: 2,
            split: Split::Train,
        }
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let data = separable(200, 1);
        let mut m = LayeredModel::mlp(&[2, 2]);
        init_params(&mut m, 5);
        let settings = TrainSettings {
            learning_rate: 0.5,
            epochs: 50,
            batch_size: 10,
            seed: 2,
            init: InitRule::UniformFanin,
        };
        let (trained, report) = train(&m, &data, &settings).unwrap();
        assert_eq!(report.final_train_accuracy, 1.0);
        // brute-force oracle: every sample classified by its side of the line
        for (x, &l) in data.images.iter().zip(&data.labels) {
            assert_eq!(super::super::predict(&trained, x).unwrap(), l);
        }
        let first = report.epoch_losses[..5].iter().sum::<f64>();
        let last = report.epoch_losses[45..].iter().sum::<f64>();
        assert!(last < first);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let data = separable(50, 3);
        let mut m = LayeredModel::mlp(&[2, 4, 2]);
        init_params(&mut m, 1);
        let settings = TrainSettings {
            learning_rate: 0.0,
            epochs: 2,
            ..TrainSettings::default()
        };
        let (trained, _) = train(&m, &data, &settings).unwrap();
        assert_eq!(trained, m);
    }

    #[test]
    fn deterministic_given_seed() {
        let data = separable(64, 4);
        let mut m = LayeredModel::mlp(&[2, 6, 2]);
        init_params(&mut m, 9);
        let s = TrainSettings {
            epochs: 3,
            batch_size: 8,
            seed: 42,
            ..TrainSettings::default()
        };
        assert_eq!(
            train(&m, &data, &s).unwrap().0,
            train(&m, &data, &s).unwrap().0
        );
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let data = separable(64, 4);
        let mut m = LayeredModel::mlp(&[2, 16, 2]);
        init_params(&mut m, 9);
        for layer in m.layers.iter_mut() {
            if let Some((w, _)) = layer.params_mut() {
                w.iter_mut().for_each(|v| *v *= 1e3);
            }
        }
        let s = TrainSettings {
            learning_rate: 1e300,
            epochs: 5,
            ..TrainSettings::default()
        };
        assert!(matches!(
            train(&m, &data, &s),
            Err(DnnError::Diverged { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_mlp_gradients(seed in 0u64..10_000, hidden in 2usize..10, classes in 2usize..5) {
            let mut m = LayeredModel::mlp(&[3, hidden, classes]);
            init_params(&mut m, seed);
            let x = rand_input(3, seed ^ 0xabc);
            let err = gradient_check(&m, &x, (seed as usize) % classes).unwrap();
            prop_assert!(err < 1e-4, "err {}", err);
        }
    }
}

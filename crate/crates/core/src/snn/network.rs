//! Converted spiking network topology.

use crate::coding::{CodingKind, CodingScheme, LayerRole};
use crate::dnn::{avgpool_accumulate, conv_accumulate, dense_accumulate};
use crate::model_io::{AvgPoolLayer, Conv2dLayer, DenseLayer, LayerSpec, LayeredModel, Shape};

use super::neuron::{NeuronLayerState, ResetMode};
use super::SnnError;

/// Connectivity feeding one spiking layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Synapses {
    Dense(DenseLayer),
    Conv2d(Conv2dLayer),
    AvgPool { pool: AvgPoolLayer, input: Shape },
}

impl Synapses {
    pub fn output_len(&self) -> usize {
        match self {
            Synapses::Dense(d) => d.out_dim,
            Synapses::Conv2d(c) => c.output_shape().len(),
            Synapses::AvgPool { pool, input } => pool.output_shape(*input).len(),
        }
    }

    /// Weighted PSP `z_j = Σ_i w_ij · e_i + s · b_j`, where `e_i` is the
    /// threshold carried by presynaptic spike `i` (zero where silent) and `s`
    /// the per-step bias scale. Pooling averages the weighted spikes over its
    /// window and has no bias.
    pub fn psp(&self, incoming: &[f64], bias_scale: f64, z: &mut [f64]) {
        match self {
            Synapses::Dense(d) => {
                for (zj, b) in z.iter_mut().zip(&d.bias) {
                    *zj = b * bias_scale;
                }
                dense_accumulate(d, incoming, z);
            }
            Synapses::Conv2d(c) => {
                for chunk in z.chunks_exact_mut(c.out_c) {
                    for (zj, b) in chunk.iter_mut().zip(&c.bias) {
                        *zj = b * bias_scale;
                    }
                }
                conv_accumulate(c, incoming, z);
            }
            Synapses::AvgPool { pool, input } => {
                z.fill(0.0);
                avgpool_accumulate(pool, *input, incoming, z);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpikingLayer {
    pub synapses: Synapses,
    pub scheme: CodingScheme,
    /// Index of the originating layer in the source model.
    pub source_layer: usize,
}

impl SpikingLayer {
    pub fn len(&self) -> usize {
        self.synapses.output_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnnNetwork {
    pub input_shape: Shape,
    pub input_scheme: CodingScheme,
    pub hidden_scheme: CodingScheme,
    /// Hidden spiking layers in feed-forward order.
    pub layers: Vec<SpikingLayer>,
    /// Non-spiking classifier: accumulates its PSP, never fires.
    pub readout: DenseLayer,
    pub reset: ResetMode,
    /// Factor applied to every bias each step; see [`bias_scale_for`].
    pub bias_scale: f64,
}

/// Mutable per-simulation state.
#[derive(Clone, Debug, PartialEq)]
pub struct SnnState {
    pub layers: Vec<NeuronLayerState>,
    pub readout: Vec<f64>,
}

impl SnnNetwork {
    pub fn input_len(&self) -> usize {
        self.input_shape.len()
    }

    pub fn num_classes(&self) -> usize {
        self.readout.out_dim
    }

    /// Sizes of all spiking populations, input first.
    pub fn population_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_len())
            .chain(self.layers.iter().map(SpikingLayer::len))
            .collect()
    }

    /// Input plus hidden neurons; the readout does not spike and is excluded.
    pub fn num_neurons(&self) -> usize {
        self.population_sizes().iter().sum()
    }

    pub fn fresh_state(&self) -> SnnState {
        let burst = matches!(self.hidden_scheme.kind, CodingKind::Burst { .. });
        SnnState {
            layers: self
                .layers
                .iter()
                .map(|l| NeuronLayerState::new(l.len(), burst))
                .collect(),
            readout: vec![0.0; self.num_classes()],
        }
    }
}

/// Per-step bias scale matching the input's delivery rate. Real and rate
/// inputs deliver a pixel's value every step, so biases enter unscaled. A
/// phase-coded input delivers it once per period of `k` steps, so the bias
/// is spread over the period as `b/k` per step; otherwise it would outweigh
/// the input `k`-fold.
pub fn bias_scale_for(input_scheme: &CodingScheme) -> f64 {
    match input_scheme.kind {
        CodingKind::Phase { k } => 1.0 / f64::from(k),
        _ => 1.0,
    }
}

/// Maps a (normalized) model onto a spiking network. ReLU layers are
/// dropped (the IF nonlinearity replaces them); every other layer except the
/// final dense one becomes a spiking layer with `hidden_scheme`.
pub fn convert(
    model: &LayeredModel,
    input_scheme: CodingScheme,
    hidden_scheme: CodingScheme,
) -> Result<SnnNetwork, SnnError> {
    model.validate()?;
    input_scheme.validate(LayerRole::Input)?;
    hidden_scheme.validate(LayerRole::Hidden)?;
    let shapes = model.layer_shapes()?;
    let last = model.layers.len() - 1;
    let mut layers = Vec::new();
    let mut readout = None;
    let mut shape = model.input_shape;
    for (index, layer) in model.layers.iter().enumerate() {
        let synapses = match layer {
            LayerSpec::Relu => None,
            LayerSpec::Dense(d) if index == last => {
                readout = Some(d.clone());
                None
            }
            LayerSpec::Dense(d) => Some(Synapses::Dense(d.clone())),
            LayerSpec::Conv2d(c) => Some(Synapses::Conv2d(c.clone())),
            LayerSpec::Avgpool(p) => Some(Synapses::AvgPool {
                pool: p.clone(),
                input: shape,
            }),
        };
        if let Some(synapses) = synapses {
            layers.push(SpikingLayer {
                synapses,
                scheme: hidden_scheme,
                source_layer: index,
            });
        }
        shape = shapes[index];
    }
    let readout =
        readout.ok_or_else(|| SnnError::Unsupported("model has no dense readout".into()))?;
    Ok(SnnNetwork {
        input_shape: model.input_shape,
        input_scheme,
        hidden_scheme,
        layers,
        readout,
        reset: ResetMode::Subtract,
        bias_scale: bias_scale_for(&input_scheme),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::Padding;

    #[test]
    fn mlp_maps_to_one_hidden_layer_and_readout() {
        let m = LayeredModel::mlp(&[784, 300, 10]);
        let net = convert(
            &m,
            CodingScheme::phase(8, 1.0),
            CodingScheme::burst(2.0, 0.125),
        )
        .unwrap();
        assert_eq!(net.layers.len(), 1);
        assert_eq!(net.layers[0].len(), 300);
        assert_eq!(net.num_classes(), 10);
        assert_eq!(net.num_neurons(), 784 + 300);
        let st = net.fresh_state();
        assert!(st.layers[0].v_mem.iter().all(|&v| v == 0.0));
        assert!(st.layers[0]
            .burst
            .as_ref()
            .unwrap()
            .g
            .iter()
            .all(|&g| g == 1.0));
        assert!(st.readout.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn conv_pool_topology() {
        let conv = Conv2dLayer::zeros(Shape::new(8, 8, 1), 2, (3, 3), 1, Padding::Same);
        let m = LayeredModel::new(
            Shape::new(8, 8, 1),
            vec![
                LayerSpec::Conv2d(conv),
                LayerSpec::Relu,
                LayerSpec::Avgpool(AvgPoolLayer {
                    window: 2,
                    stride: 2,
                }),
                LayerSpec::Dense(DenseLayer::zeros(32, 3)),
            ],
        );
        let net = convert(&m, CodingScheme::real(), CodingScheme::rate(1.0)).unwrap();
        assert_eq!(net.population_sizes(), vec![64, 128, 32]);
        assert_eq!(net.layers[1].source_layer, 2);
    }

    #[test]
    fn real_hidden_scheme_rejected() {
        let m = LayeredModel::mlp(&[4, 3, 2]);
        assert!(matches!(
            convert(&m, CodingScheme::real(), CodingScheme::real()),
            Err(SnnError::Coding(_))
        ));
    }

    #[test]
    fn max_pool_models_never_reach_conversion() {
        let text = r#"{"format_version":1,"input_shape":[2,2,1],"layers":[
            {"kind":"maxpool","window":2,"stride":2},
            {"kind":"dense","in_dim":1,"out_dim":1,"weights":[1],"bias":[0]}]}"#;
        let err = LayeredModel::from_json(text).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn psp_examples() {
        let dense = |w: Vec<f64>, b: f64| {
            Synapses::Dense(DenseLayer {
                in_dim: w.len(),
                out_dim: 1,
                weights: w,
                bias: vec![b],
            })
        };
        let mut z = [0.0];
        dense(vec![2.0], 0.0).psp(&[0.25], 1.0, &mut z);
        assert_eq!(z, [0.5]);
        dense(vec![2.0], 0.1).psp(&[0.0], 1.0, &mut z);
        assert_eq!(z, [0.1]);
        dense(vec![1.0, -1.0], 0.0).psp(&[0.125, 0.125], 1.0, &mut z);
        assert_eq!(z, [0.0]);
        let pool = Synapses::AvgPool {
            pool: AvgPoolLayer {
                window: 2,
                stride: 2,
            },
            input: Shape::new(2, 2, 1),
        };
        pool.psp(&[0.5, 0.0, 0.25, 0.25], 1.0, &mut z);
        assert_eq!(z, [0.25]);
    }

    #[test]
    fn bias_spread_over_phase_period() {
        assert_eq!(bias_scale_for(&CodingScheme::phase(8, 1.0)), 0.125);
        assert_eq!(bias_scale_for(&CodingScheme::rate(1.0)), 1.0);
        assert_eq!(bias_scale_for(&CodingScheme::real()), 1.0);
        let d = Synapses::Dense(DenseLayer {
            in_dim: 1,
            out_dim: 1,
            weights: vec![1.0],
            bias: vec![0.4],
        });
        let mut z = [0.0];
        d.psp(&[0.0], 0.125, &mut z);
        assert_eq!(z, [0.05]);
    }
}

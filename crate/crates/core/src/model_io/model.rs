//! Layered feed-forward model description and its JSON file format.
//!
//! Dense weights are stored input-major (`index = i * out_dim + j`), conv2d
//! kernels as `[k_h][k_w][in_c][out_c]` row-major. Activations are laid out
//! `(y * w + x) * c + channel`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model document: {0}")]
    Parse(String),
    #[error("layer {index}: {message}")]
    Layer { index: usize, message: String },
    #[error(
        "layer {index}: incoming shape {incoming} does not match declared input shape {declared}"
    )]
    ShapeMismatch {
        index: usize,
        incoming: Shape,
        declared: Shape,
    },
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// Activation shape `(h, w, c)`. Flat vectors are `(1, 1, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Shape { h, w, c }
    }

    pub fn flat(n: usize) -> Self {
        Shape { h: 1, w: 1, c: n }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_flat(&self) -> bool {
        self.h == 1 && self.w == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_flat() {
            write!(f, "[{}]", self.c)
        } else {
            write!(f, "[{}, {}, {}]", self.h, self.w, self.c)
        }
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = String;

    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        let shape = match v.as_slice() {
            [n] => Shape::flat(*n),
            [h, w, c] => Shape::new(*h, *w, *c),
            _ => return Err(format!("shape must have 1 or 3 entries, got {}", v.len())),
        };
        if shape.is_empty() {
            return Err("shape has a zero dimension".into());
        }
        Ok(shape)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        if s.is_flat() {
            vec![s.c]
        } else {
            vec![s.h, s.w, s.c]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.out_dim + j]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conv2dLayer {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub padding: Padding,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2dLayer {
    pub fn zeros(
        input: Shape,
        out_c: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Self {
        let (k_h, k_w) = kernel;
        Conv2dLayer {
            in_h: input.h,
            in_w: input.w,
            in_c: input.c,
            out_c,
            k_h,
            k_w,
            stride,
            padding,
            weights: vec![0.0; k_h * k_w * input.c * out_c],
            bias: vec![0.0; out_c],
        }
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(self.in_h, self.in_w, self.in_c)
    }

    /// Output extent along one axis and the leading zero padding.
    fn axis(&self, input: usize, kernel: usize) -> (usize, usize) {
        match self.padding {
            Padding::Valid => {
                if input < kernel {
                    (0, 0)
                } else {
                    ((input - kernel) / self.stride + 1, 0)
                }
            }
            Padding::Same => {
                let out = input.div_ceil(self.stride);
                let total = ((out - 1) * self.stride + kernel).saturating_sub(input);
                (out, total / 2)
            }
        }
    }

    pub fn output_shape(&self) -> Shape {
        let (oh, _) = self.axis(self.in_h, self.k_h);
        let (ow, _) = self.axis(self.in_w, self.k_w);
        Shape::new(oh, ow, self.out_c)
    }

    /// Leading padding `(top, left)`.
    pub fn pad_before(&self) -> (usize, usize) {
        (
            self.axis(self.in_h, self.k_h).1,
            self.axis(self.in_w, self.k_w).1,
        )
    }

    #[inline]
    pub fn weight_index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.k_w + kx) * self.in_c + ci) * self.out_c + co
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvgPoolLayer {
    pub window: usize,
    pub stride: usize,
}

impl AvgPoolLayer {
    pub fn output_shape(&self, input: Shape) -> Shape {
        let axis = |n: usize| {
            if n < self.window {
                0
            } else {
                (n - self.window) / self.stride + 1
            }
        };
        Shape::new(axis(input.h), axis(input.w), input.c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense(DenseLayer),
    Conv2d(Conv2dLayer),
    Avgpool(AvgPoolLayer),
    Relu,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense(_) => "dense",
            LayerSpec::Conv2d(_) => "conv2d",
            LayerSpec::Avgpool(_) => "avgpool",
            LayerSpec::Relu => "relu",
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::Dense(_) | LayerSpec::Conv2d(_))
    }

    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            LayerSpec::Dense(d) => Some((&d.weights, &d.bias)),
            LayerSpec::Conv2d(c) => Some((&c.weights, &c.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            LayerSpec::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            LayerSpec::Conv2d(c) => Some((&mut c.weights, &mut c.bias)),
            _ => None,
        }
    }

    /// Checks the layer's own invariants and returns its output shape for
    /// the given incoming shape.
    pub fn check(&self, index: usize, incoming: Shape) -> Result<Shape, ModelError> {
        let layer_err = |message: String| ModelError::Layer { index, message };
        match self {
            LayerSpec::Dense(d) => {
                if d.in_dim == 0 || d.out_dim == 0 {
                    return Err(layer_err("dense dimensions must be positive".into()));
                }
                if d.weights.len() != d.in_dim * d.out_dim {
                    return Err(layer_err(format!(
                        "dense weights length {} != in_dim*out_dim = {}",
                        d.weights.len(),
                        d.in_dim * d.out_dim
                    )));
                }
                if d.bias.len() != d.out_dim {
                    return Err(layer_err(format!(
                        "dense bias length {} != out_dim {}",
                        d.bias.len(),
                        d.out_dim
                    )));
                }
                if incoming.len() != d.in_dim {
                    return Err(ModelError::ShapeMismatch {
                        index,
                        incoming,
                        declared: Shape::flat(d.in_dim),
                    });
                }
                Ok(Shape::flat(d.out_dim))
            }
            LayerSpec::Conv2d(c) => {
                if c.stride == 0 {
                    return Err(layer_err("stride must be >= 1".into()));
                }
                if c.k_h == 0 || c.k_w == 0 || c.out_c == 0 {
                    return Err(layer_err(
                        "kernel and channel counts must be positive".into(),
                    ));
                }
                let expected = c.k_h * c.k_w * c.in_c * c.out_c;
                if c.weights.len() != expected {
                    return Err(layer_err(format!(
                        "conv2d weights length {} != k_h*k_w*in_c*out_c = {expected}",
                        c.weights.len()
                    )));
                }
                if c.bias.len() != c.out_c {
                    return Err(layer_err(format!(
                        "conv2d bias length {} != out_c {}",
                        c.bias.len(),
                        c.out_c
                    )));
                }
                if incoming != c.input_shape() {
                    return Err(ModelError::ShapeMismatch {
                        index,
                        incoming,
                        declared: c.input_shape(),
                    });
                }
                let out = c.output_shape();
                if out.is_empty() {
                    return Err(layer_err("conv2d output is empty".into()));
                }
                Ok(out)
            }
            LayerSpec::Avgpool(p) => {
                if p.stride == 0 || p.window == 0 {
                    return Err(layer_err("avgpool window and stride must be >= 1".into()));
                }
                let out = p.output_shape(incoming);
                if out.is_empty() {
                    return Err(layer_err(format!(
                        "avgpool window {} larger than input {incoming}",
                        p.window
                    )));
                }
                Ok(out)
            }
            LayerSpec::Relu => Ok(incoming),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredModel {
    pub format_version: u32,
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
}

impl LayeredModel {
    pub fn new(input_shape: Shape, layers: Vec<LayerSpec>) -> Self {
        LayeredModel {
            format_version: FORMAT_VERSION,
            input_shape,
            layers,
        }
    }

    /// Dense ReLU network with zero parameters, e.g. `&[784, 300, 10]`.
    pub fn mlp(widths: &[usize]) -> Self {
        assert!(
            widths.len() >= 2,
            "an MLP needs at least input and output widths"
        );
        let mut layers = Vec::new();
        for (k, pair) in widths.windows(2).enumerate() {
            layers.push(LayerSpec::Dense(DenseLayer::zeros(pair[0], pair[1])));
            if k + 2 < widths.len() {
                layers.push(LayerSpec::Relu);
            }
        }
        LayeredModel::new(Shape::flat(widths[0]), layers)
    }

    /// Output shape of every layer, validating invariants along the way.
    pub fn layer_shapes(&self) -> Result<Vec<Shape>, ModelError> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = self.input_shape;
        for (index, layer) in self.layers.iter().enumerate() {
            current = layer.check(index, current)?;
            shapes.push(current);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.format_version != FORMAT_VERSION {
            return Err(ModelError::Version(self.format_version));
        }
        if self.input_shape.is_empty() {
            return Err(ModelError::Invalid("input shape is empty".into()));
        }
        self.layer_shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Dense(_)) => {}
            Some(other) => {
                return Err(ModelError::Invalid(format!(
                    "final layer must be dense (classifier readout), found {}",
                    other.kind_name()
                )))
            }
            None => return Err(ModelError::Invalid("model has no layers".into())),
        }
        for (index, layer) in self.layers.iter().enumerate() {
            if let Some((w, b)) = layer.params() {
                if w.iter().chain(b).any(|v| !v.is_finite()) {
                    return Err(ModelError::Layer {
                        index,
                        message: "non-finite parameter".into(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Dense(d)) => d.out_dim,
            _ => 0,
        }
    }

    pub fn weighted_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_weighted())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        self.validate()?;
        serde_json::to_string(self).map_err(|e| ModelError::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| ModelError::Parse("top level must be an object".into()))?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "format_version" | "input_shape" | "layers") {
                return Err(ModelError::Parse(format!("unknown top-level key `{key}`")));
            }
        }
        let field = |name: &str| {
            obj.get(name)
                .ok_or_else(|| ModelError::Parse(format!("missing key `{name}`")))
        };
        let format_version = field("format_version")?
            .as_u64()
            .ok_or_else(|| ModelError::Parse("format_version must be an integer".into()))?;
        if format_version != u64::from(FORMAT_VERSION) {
            return Err(ModelError::Version(
                format_version.try_into().unwrap_or(u32::MAX),
            ));
        }
        let input_shape: Shape = serde_json::from_value(field("input_shape")?.clone())
            .map_err(|e| ModelError::Parse(format!("input_shape: {e}")))?;
        let raw_layers = field("layers")?
            .as_array()
            .ok_or_else(|| ModelError::Parse("layers must be an array".into()))?;
        let layers = raw_layers
            .iter()
            .enumerate()
            .map(|(index, raw)| {
                serde_json::from_value::<LayerSpec>(raw.clone()).map_err(|e| ModelError::Layer {
                    index,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let model = LayeredModel {
            format_version: FORMAT_VERSION,
            input_shape,
            layers,
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LayeredModel, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    LayeredModel::from_json(&text)
}

/// Validates, then writes the model. Nothing is written if validation fails.
pub fn save_model(model: &LayeredModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let text = model.to_json()?;
    fs::write(path, text).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

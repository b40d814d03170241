use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3x3 convolution, stride 1, zero padding 1.
    Conv3x3 { out_channels: usize },
    Relu,
    Maxpool2x2,
    Flatten,
    Dense { out_units: usize },
    Sigmoid,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv3x3 { .. } | LayerSpec::Dense { .. })
    }
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// `[channels, height, width]`
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    /// Parameterized layers with ordinal `<= freeze_boundary` are never updated.
    #[serde(default)]
    pub freeze_boundary: Option<usize>,
}

/// A layer with its resolved shapes and, when it has weights, its ordinal among weighted layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerPlan {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub param: Option<usize>,
}

/// Shapes of one parameterized layer's weight and bias tensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub weight: Vec<usize>,
    pub bias: Vec<usize>,
    pub fan_in: usize,
}

impl NetworkConfig {
    pub fn new(input_shape: [usize; 3], layers: Vec<LayerSpec>) -> Self {
        Self { input_shape, layers, freeze_boundary: None }
    }

    pub fn with_freeze_boundary(mut self, boundary: Option<usize>) -> Self {
        self.freeze_boundary = boundary;
        self
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Propagates shapes through the stack, checking every structural rule.
    pub fn resolve(&self) -> Result<Vec<LayerPlan>, NnError> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(NnError::Config("input dimensions must be positive".into()));
        }
        let mut shape = Shape::Spatial { c, h, w };
        let mut plans = Vec::with_capacity(self.layers.len());
        let mut param = 0usize;
        let last = self.layers.len().checked_sub(1).ok_or_else(|| NnError::Config("no layers".into()))?;
        for (i, &spec) in self.layers.iter().enumerate() {
            let bad = |msg: &str| NnError::Config(format!("layer {i} ({spec:?}): {msg}"));
            let output = match (spec, shape) {
                (LayerSpec::Conv3x3 { out_channels }, Shape::Spatial { h, w, .. }) if out_channels > 0 => {
                    Shape::Spatial { c: out_channels, h, w }
                }
                (LayerSpec::Conv3x3 { .. }, Shape::Spatial { .. }) => return Err(bad("zero output channels")),
                (LayerSpec::Conv3x3 { .. }, Shape::Flat(_)) => return Err(bad("convolution after flatten")),
                (LayerSpec::Maxpool2x2, Shape::Spatial { c, h, w }) if h >= 2 && w >= 2 => {
                    Shape::Spatial { c, h: h / 2, w: w / 2 }
                }
                (LayerSpec::Maxpool2x2, Shape::Spatial { .. }) => return Err(bad("spatial size below 2")),
                (LayerSpec::Maxpool2x2, Shape::Flat(_)) => return Err(bad("pooling after flatten")),
                (LayerSpec::Flatten, Shape::Spatial { .. }) => Shape::Flat(shape.len()),
                (LayerSpec::Flatten, Shape::Flat(_)) => return Err(bad("already flat")),
                (LayerSpec::Dense { out_units }, Shape::Flat(_)) if out_units > 0 => Shape::Flat(out_units),
                (LayerSpec::Dense { .. }, Shape::Flat(_)) => return Err(bad("zero output units")),
                (LayerSpec::Dense { .. }, Shape::Spatial { .. }) => return Err(bad("dense layer needs a preceding flatten")),
                (LayerSpec::Relu, s) => s,
                (LayerSpec::Sigmoid, s) if i == last => s,
                (LayerSpec::Sigmoid, _) => return Err(bad("sigmoid may only be the final layer")),
            };
            let p = spec.has_params().then(|| {
                param += 1;
                param - 1
            });
            plans.push(LayerPlan { spec, input: shape, output, param: p });
            shape = output;
        }
        if self.layers[last] != LayerSpec::Sigmoid || shape != Shape::Flat(1) {
            return Err(NnError::Config("network must end in a single unit followed by sigmoid".into()));
        }
        Ok(plans)
    }

    pub fn param_shapes(&self) -> Result<Vec<ParamShape>, NnError> {
        Ok(self
            .resolve()?
            .iter()
            .filter_map(|p| match (p.spec, p.input) {
                (LayerSpec::Conv3x3 { out_channels }, Shape::Spatial { c, .. }) => Some(ParamShape {
                    name: format!("conv{}", p.param.unwrap()),
                    weight: vec![out_channels, c, 3, 3],
                    bias: vec![out_channels],
                    fan_in: c * 9,
                }),
                (LayerSpec::Dense { out_units }, input) => Some(ParamShape {
                    name: format!("dense{}", p.param.unwrap()),
                    weight: vec![out_units, input.len()],
                    bias: vec![out_units],
                    fan_in: input.len(),
                }),
                _ => None,
            })
            .collect())
    }

    pub fn param_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.has_params()).count()
    }

    pub fn is_trainable(&self, param_index: usize) -> bool {
        self.freeze_boundary.is_none_or(|k| param_index > k)
    }

    pub fn trainable_mask(&self) -> Vec<bool> {
        (0..self.param_layer_count()).map(|i| self.is_trainable(i)).collect()
    }
}

/// Five VGG conv blocks, two 4096-unit dense layers and a single sigmoid unit,
/// with weighted layers 0..=14 frozen so only the output layer retrains.
pub fn vgg16_config(input: [usize; 3]) -> NetworkConfig {
    let mut layers = Vec::new();
    for block in [&[64, 64][..], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]] {
        for &out_channels in block {
            layers.push(LayerSpec::Conv3x3 { out_channels });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Maxpool2x2);
    }
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense { out_units: 4096 },
        LayerSpec::Relu,
        LayerSpec::Dense { out_units: 4096 },
        LayerSpec::Relu,
        LayerSpec::Dense { out_units: 1 },
        LayerSpec::Sigmoid,
    ]);
    NetworkConfig { input_shape: input, layers, freeze_boundary: Some(14) }
}

/// A reduced VGG-style stack for desk-scale images: one conv + relu + pool per
/// entry of `block_channels`, then a hidden dense layer and the sigmoid head.
pub fn compact_config(input: [usize; 3], block_channels: &[usize], hidden_units: usize) -> NetworkConfig {
    let mut layers = Vec::new();
    for &out_channels in block_channels {
        layers.extend([LayerSpec::Conv3x3 { out_channels }, LayerSpec::Relu, LayerSpec::Maxpool2x2]);
    }
    layers.push(LayerSpec::Flatten);
    if hidden_units > 0 {
        layers.extend([LayerSpec::Dense { out_units: hidden_units }, LayerSpec::Relu]);
    }
    layers.extend([LayerSpec::Dense { out_units: 1 }, LayerSpec::Sigmoid]);
    NetworkConfig::new(input, layers)
}

/// Default network for 32x32 RGB inputs.
pub fn default_config() -> NetworkConfig {
    compact_config([3, 32, 32], &[8, 16, 32], 32)
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NetworkConfig, NnError, Scalar};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f32> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![T::zero(); n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams<T = f32> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Weights and biases of every parameterized layer, in stack order.
/// Gradients use the same structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet<T = f32> {
    pub layers: Vec<LayerParams<T>>,
}

pub type Gradients<T = f32> = ParameterSet<T>;

impl<T: Scalar> ParameterSet<T> {
    /// Zero-filled parameters shaped for `config`.
    pub fn zeros(config: &NetworkConfig) -> Result<Self, NnError> {
        Ok(Self {
            layers: config
                .param_shapes()?
                .into_iter()
                .map(|s| LayerParams { name: s.name, weight: Tensor::zeros(s.weight), bias: Tensor::zeros(s.bias) })
                .collect(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    name: l.name.clone(),
                    weight: Tensor::zeros(l.weight.shape.clone()),
                    bias: Tensor::zeros(l.bias.shape.clone()),
                })
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Every tensor in order: weight then bias for each layer.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x = *x + *y;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams { name: l.name.clone(), weight: l.weight.cast(), bias: l.bias.cast() })
                .collect(),
        }
    }

    /// Checks tensor shapes against the configuration.
    pub fn check_against(&self, config: &NetworkConfig) -> Result<(), NnError> {
        let shapes = config.param_shapes()?;
        if shapes.len() != self.layers.len() {
            return Err(NnError::ConfigMismatch(format!(
                "config has {} parameterized layers, parameters have {}",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (s, l) in shapes.iter().zip(&self.layers) {
            if s.weight != l.weight.shape || s.bias != l.bias.shape {
                return Err(NnError::ConfigMismatch(format!(
                    "{}: expected {:?}/{:?}, found {:?}/{:?}",
                    s.name, s.weight, s.bias, l.weight.shape, l.bias.shape
                )));
            }
        }
        Ok(())
    }
}

/// He-uniform weights (`U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`) and zero biases.
pub fn build_network(config: &NetworkConfig, init_seed: u64) -> Result<ParameterSet, NnError> {
    let shapes = config.param_shapes()?;
    let layers = shapes
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = seeded(derive_seed(init_seed, &[i as u64]));
            let limit = (6.0 / s.fan_in as f64).sqrt() as f32;
            let n: usize = s.weight.iter().product();
            let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
            LayerParams { name: s.name, weight: Tensor { shape: s.weight, data }, bias: Tensor::zeros(s.bias) }
        })
        .collect();
    Ok(ParameterSet { layers })
}

/// Re-draws one layer's weights with He-uniform init and zeroes its bias,
/// e.g. to replace a task head before fine-tuning.
pub fn reinit_layer(params: &mut ParameterSet, index: usize, seed: u64) {
    let layer = &mut params.layers[index];
    let fan_in: usize = layer.weight.shape[1..].iter().product();
    let limit = (6.0 / fan_in as f64).sqrt() as f32;
    let mut rng = seeded(derive_seed(seed, &[index as u64, 0xfeed]));
    for w in &mut layer.weight.data {
        *w = rng.random_range(-limit..limit);
    }
    layer.bias.data.iter_mut().for_each(|b| *b = 0.0);
}

use std::ops::ControlFlow;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::batch_pass;
use super::{optimizer_step, LossKind, NetworkConfig, NnError, OptimizerKind, OptimizerState, ParameterSet};
use crate::data::{FeatureTensor, Label};
use crate::rng::{derive_seed, seeded};

/// Normalized inputs with binary targets, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleSet {
    pub sample_shape: [usize; 3],
    pub inputs: Vec<f32>,
    pub targets: Vec<f32>,
}

impl ExampleSet {
    pub fn new(sample_shape: [usize; 3]) -> Self {
        Self { sample_shape, inputs: Vec::new(), targets: Vec::new() }
    }

    pub fn from_tensors(items: &[(FeatureTensor, Label)]) -> Result<Self, NnError> {
        let first = items.first().ok_or(NnError::EmptyDataset)?;
        let shape: [usize; 3] = first
            .0
            .shape()
            .try_into()
            .map_err(|_| NnError::ShapeMismatch { expected: vec![0, 0, 0], actual: first.0.shape().to_vec() })?;
        let mut set = Self::new(shape);
        for (t, l) in items {
            set.push(t.data(), *l)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, sample: &[f32], label: Label) -> Result<(), NnError> {
        if sample.len() != self.sample_len() {
            return Err(NnError::ShapeMismatch { expected: self.sample_shape.to_vec(), actual: vec![sample.len()] });
        }
        self.inputs.extend_from_slice(sample);
        self.targets.push(label.target());
        Ok(())
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn labels(&self) -> Vec<Label> {
        self.targets.iter().map(|&t| if t >= 0.5 { Label::Malignant } else { Label::Benign }).collect()
    }

    /// All samples as a `[N, C, H, W]` tensor.
    pub fn as_batch(&self) -> FeatureTensor {
        let mut shape = vec![self.len()];
        shape.extend_from_slice(&self.sample_shape);
        FeatureTensor::new(shape, self.inputs.clone()).expect("example set is consistent")
    }

    pub fn subset(&self, indices: &[usize]) -> ExampleSet {
        let mut out = ExampleSet::new(self.sample_shape);
        for &i in indices {
            out.inputs.extend_from_slice(self.sample(i));
            out.targets.push(self.targets[i]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub shuffle_seed: u64,
}

fn default_epochs() -> usize {
    100
}

fn default_batch() -> usize {
    32
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Bce,
            optimizer: OptimizerKind::default(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        self.optimizer.validate().map_err(NnError::Config)?;
        if self.epochs == 0 {
            return Err(NnError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f32,
    pub train_accuracy: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Excluded from equality-sensitive comparisons by callers; wall time is not deterministic.
    pub wall_time_ms: u64,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Trains for `cfg.epochs` epochs. Frozen layers are bit-identical on return.
pub fn train(params: &mut ParameterSet, config: &NetworkConfig, data: &ExampleSet, cfg: &TrainConfig) -> Result<TrainHistory, NnError> {
    train_with(params, config, data, cfg, |_, _| ControlFlow::Continue(()))
}

/// Like [`train`], calling `observer` after every epoch; returning `Break` stops early.
pub fn train_with(
    params: &mut ParameterSet,
    config: &NetworkConfig,
    data: &ExampleSet,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochStats, &ParameterSet) -> ControlFlow<()>,
) -> Result<TrainHistory, NnError> {
    cfg.validate()?;
    let plans = config.resolve()?;
    params.check_against(config)?;
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if data.sample_shape != config.input_shape {
        return Err(NnError::ShapeMismatch { expected: config.input_shape.to_vec(), actual: data.sample_shape.to_vec() });
    }
    if cfg.batch_size > data.len() {
        return Err(NnError::Config(format!("batch size {} exceeds dataset size {}", cfg.batch_size, data.len())));
    }
    let trainable = config.trainable_mask();
    let mut state = OptimizerState::new(params);
    let mut history = TrainHistory::default();
    let start = Instant::now();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let len = data.sample_len();
    let mut inputs = Vec::with_capacity(cfg.batch_size * len);
    let mut targets = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seeded(derive_seed(cfg.shuffle_seed, &[epoch as u64])));
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            inputs.clear();
            targets.clear();
            for &i in chunk {
                inputs.extend_from_slice(data.sample(i));
                targets.push(data.targets[i]);
            }
            let pass = batch_pass(&plans, params, &inputs, &targets, cfg.loss);
            loss_sum += pass.loss as f64 * chunk.len() as f64;
            correct += pass.preds.iter().zip(&targets).filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5)).count();
            optimizer_step(params, &pass.grads, &mut state, &cfg.optimizer, &trainable);
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: (loss_sum / data.len() as f64) as f32,
            train_accuracy: correct as f32 / data.len() as f32,
        };
        let flow = observer(&stats, params);
        history.epochs.push(stats);
        if flow.is_break() {
            break;
        }
    }
    history.wall_time_ms = start.elapsed().as_millis() as u64;
    Ok(history)
}

/// Malignant probabilities for every sample of a set.
pub fn predict(params: &ParameterSet, config: &NetworkConfig, data: &ExampleSet) -> Result<Vec<f32>, NnError> {
    if data.is_empty() {
        return Ok(Vec::new());
    }
    super::forward(params, config, &data.as_batch())
}

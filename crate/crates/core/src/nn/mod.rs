//! From-scratch convolutional network: VGG-style layer stacks ending in a
//! single sigmoid unit, backpropagation, SGD and Adam, freeze-boundary
//! transfer learning, gradient checking, and weight serialization.
//!
//! Arithmetic is generic over [`Scalar`] so the gradient checker can run the
//! same kernels in double precision; training and inference use `f32`.

mod config;
mod gradcheck;
mod loss;
mod net;
mod optim;
mod params;
mod train;
mod weights;

use std::fmt::Debug;

pub use config::{compact_config, default_config, vgg16_config, LayerPlan, LayerSpec, NetworkConfig, ParamShape, Shape};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport, GRAD_FLOOR};
pub use loss::{loss, LossKind, PROB_EPS};
pub use net::{backward, forward};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};
pub use params::{build_network, reinit_layer, Gradients, LayerParams, ParameterSet, Tensor};
pub use train::{predict, train, train_with, EpochStats, ExampleSet, TrainConfig, TrainHistory};
pub use weights::{config_sidecar, decode_weights, encode_weights, load_weights, load_weights_with, save_weights, FORMAT_VERSION, MAGIC};

pub trait Scalar: num_traits::Float + num_traits::FromPrimitive + Debug + Send + Sync + 'static {}

impl<T: num_traits::Float + num_traits::FromPrimitive + Debug + Send + Sync + 'static> Scalar for T {}

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("weight format version {found} is not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("weight file is truncated")]
    TruncatedTensor,
    #[error("weights do not match config: {0}")]
    ConfigMismatch(String),
    #[error("corrupt weight file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

//! Continuous-training pipeline for binary skin-lesion classification.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: images, manifests, resizing, normalization, stratified splits, dataset profiles
//! - [`eda`]: per-class mean/dispersion images and the difference heatmap
//! - [`augment`]: training and subgroup augmentation transforms plus the multiplicity planner
//! - [`nn`]: a small from-scratch CNN stack with backprop, SGD/Adam and layer freezing
//! - [`eval`]: confusion matrix, F1, ROC/AUC and subgroup gaps
//! - [`pipeline`]: skew validation, retraining triggers, the promotion gate and the model registry
//! - [`synth`]: synthetic lesion-blob datasets used by tests, benchmarks and the demo

pub mod augment;
pub mod data;
pub mod eda;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod synth;

mod rng;

pub use data::{DatasetManifest, FeatureTensor, Label, PixelImage, SampleRecord};
pub use eval::EvalReport;

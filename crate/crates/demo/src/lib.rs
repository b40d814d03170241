//! Three interactive views over the core crate, exported to JavaScript.
//!
//! Every export is a thin wrapper over a plain function so the logic can be
//! tested natively.

use lesionpipe::augment::AugmentOp;
use lesionpipe::eda::{class_mean_image, difference_heatmap};
use lesionpipe::eval::{auc, confusion_matrix, precision_recall_f1, roc_curve};
use lesionpipe::synth::{lesion_image, lesion_set, Domain};
use lesionpipe::{Label, PixelImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn parse_op(op: &str, strength: f64) -> Result<Option<AugmentOp>, String> {
    let op = match op {
        "none" => return Ok(None),
        "rotate90" => AugmentOp::Rotate90,
        "noise" => AugmentOp::GaussianNoise { amount: 0.5, strength },
        "darken" => AugmentOp::Darken { amount: strength.min(0.95) },
        "blur" => AugmentOp::Blur { radius: 1 + (strength * 3.0).round() as usize },
        "exposure" => AugmentOp::Exposure { factor: 1.0 + strength },
        "crop" => AugmentOp::Crop { fraction: (1.0 - 0.5 * strength).max(0.05) },
        other => return Err(format!("unknown operation {other:?}")),
    };
    op.validate().map_err(|e| e.to_string())?;
    Ok(Some(op))
}

fn domain(dark: bool) -> Domain {
    if dark {
        Domain::B
    } else {
        Domain::A
    }
}

/// Renders one lesion and applies `op`. Crops are scaled back up so the
/// preview keeps its size.
pub fn preview(op: &str, strength: f64, malignant: bool, dark: bool, size: usize, seed: u64) -> Result<PixelImage, String> {
    let label = if malignant { Label::Malignant } else { Label::Benign };
    let img = lesion_image(label, domain(dark), size, seed);
    let Some(op) = parse_op(op, strength)? else { return Ok(img) };
    let out = op.apply(&img, seed ^ 0x5eed).map_err(|e| e.to_string())?;
    if out.width() == size && out.height() == size {
        Ok(out)
    } else {
        lesionpipe::data::resize_bilinear(&out, size, size).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Serialize)]
pub struct RocView {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Scores drawn as `sigmoid(N(±separation/2, 1))` for `n` cases per class,
/// then summarised at `threshold`.
pub fn roc_view(separation: f64, n: usize, threshold: f64, seed: u64) -> Result<RocView, String> {
    if n == 0 {
        return Err("need at least one case per class".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut scores = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for (label, centre) in [(Label::Benign, -separation / 2.0), (Label::Malignant, separation / 2.0)] {
        for _ in 0..n {
            let z: f64 = centre + noise.sample(&mut rng);
            scores.push(1.0 / (1.0 + (-z).exp()));
            labels.push(label);
        }
    }
    let roc = roc_curve(&scores, &labels).map_err(|e| e.to_string())?;
    let m = confusion_matrix(&scores, &labels, threshold).map_err(|e| e.to_string())?;
    let (precision, recall, f1) = precision_recall_f1(&m);
    Ok(RocView { auc: auc(&roc), points: roc.points, threshold, tp: m.tp, fp: m.fp, tn: m.tn, fn_: m.fn_, precision, recall, f1 })
}

/// Heatmap of where the benign and malignant class means differ.
pub fn heatmap(per_class: usize, dark: bool, size: usize, seed: u64) -> Result<PixelImage, String> {
    let set = lesion_set(per_class, per_class, domain(dark), size, seed);
    let (benign, malignant): (Vec<_>, Vec<_>) = set.into_iter().partition(|(_, l)| *l == Label::Benign);
    let mean = |v: Vec<(PixelImage, Label)>| class_mean_image(&v.into_iter().map(|(i, _)| i).collect::<Vec<_>>());
    let b = mean(benign).map_err(|e| e.to_string())?;
    let m = mean(malignant).map_err(|e| e.to_string())?;
    difference_heatmap(&m, &b).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn augment_preview(op: &str, strength: f64, malignant: bool, dark: bool, size: usize, seed: u32) -> Result<Vec<u8>, JsError> {
    Ok(preview(op, strength, malignant, dark, size, seed as u64).map_err(|e| JsError::new(&e))?.to_rgba())
}

#[wasm_bindgen]
pub fn roc_explorer(separation: f64, n: usize, threshold: f64, seed: u32) -> Result<String, JsError> {
    let view = roc_view(separation, n, threshold, seed as u64).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&view).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn class_heatmap(per_class: usize, dark: bool, size: usize, seed: u32) -> Result<Vec<u8>, JsError> {
    Ok(heatmap(per_class, dark, size, seed as u64).map_err(|e| JsError::new(&e))?.to_rgba())
}

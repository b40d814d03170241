use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use lesionpipe::data::{prepare_input, NormMode, PixelImage};
use lesionpipe::nn::{forward, load_weights, NetworkConfig, ParameterSet};
use lesionpipe::pipeline::{ModelVersion, Stage};
use lesionpipe::EvalReport;
use serde::{Deserialize, Serialize};

/// Headline metrics of the registry's stored evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        Self { accuracy: r.accuracy, precision: r.precision, recall: r.recall, f1: r.f1, auc: r.auc }
    }
}

/// An immutable loaded model. Handlers hold an `Arc` for the whole request,
/// so a swap never changes the weights under them.
#[derive(Debug)]
pub struct ModelSnapshot {
    pub version_id: u64,
    pub stage: Stage,
    pub params: ParameterSet,
    pub config: NetworkConfig,
    pub norm: NormMode,
    pub eval: Option<EvalSummary>,
    pub created_at: DateTime<Utc>,
}

impl ModelSnapshot {
    /// Loads a registered version from its weight file.
    pub fn from_version(version: &ModelVersion, norm: NormMode) -> anyhow::Result<Self> {
        let (params, config) = load_weights(&version.weights_path)?;
        Ok(Self {
            version_id: version.version_id,
            stage: version.stage,
            params,
            config,
            norm,
            eval: Some(EvalSummary::from(&version.eval)),
            created_at: version.created_at,
        })
    }

    /// All-zero weights: every input scores exactly 0.5.
    pub fn debug_zero(version_id: u64, config: NetworkConfig) -> anyhow::Result<Self> {
        let params = ParameterSet::zeros(&config)?;
        Ok(Self { version_id, stage: Stage::Production, params, config, norm: NormMode::Unit, eval: None, created_at: Utc::now() })
    }

    /// Malignant probability of one image.
    pub fn score(&self, image: &PixelImage) -> anyhow::Result<f32> {
        let input = prepare_input(image, self.config.input_shape, self.norm)?;
        Ok(forward(&self.params, &self.config, &input)?[0])
    }

    /// A forward pass on a mid-grey image must yield a finite probability.
    pub fn self_test(&self) -> Result<(), String> {
        let [c, h, w] = self.config.input_shape;
        let probe = PixelImage::filled(w, h, c, 128).map_err(|e| e.to_string())?;
        match self.score(&probe) {
            Ok(p) if p.is_finite() && (0.0..=1.0).contains(&p) => Ok(()),
            Ok(p) => Err(format!("self-test produced {p}")),
            Err(e) => Err(format!("self-test failed: {e}")),
        }
    }
}

/// The atomically swappable current model.
#[derive(Debug, Default)]
pub struct ModelSlot {
    current: RwLock<Option<Arc<ModelSnapshot>>>,
}

impl ModelSlot {
    pub fn get(&self) -> Option<Arc<ModelSnapshot>> {
        self.current.read().expect("model lock poisoned").clone()
    }

    /// Publishes `next` after it passes its self-test; on failure the current model keeps serving.
    pub fn hot_swap(&self, next: ModelSnapshot) -> Result<(), String> {
        next.self_test()?;
        *self.current.write().expect("model lock poisoned") = Some(Arc::new(next));
        Ok(())
    }

    pub fn clear(&self) {
        *self.current.write().expect("model lock poisoned") = None;
    }
}

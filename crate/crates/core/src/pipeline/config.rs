use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GateConfig, PipelineError, SkewThresholds, TriggerConfig};
use crate::data::NormMode;
use crate::nn::{default_config, NetworkConfig, TrainConfig};

/// How candidates are trained and evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub train_fraction: f64,
    pub split_seed: u64,
    pub augment: bool,
    pub augment_seed: u64,
    pub network: NetworkConfig,
    pub norm: NormMode,
    pub train: TrainConfig,
    pub init_seed: u64,
    /// Pretrained weights to start from (with their config sidecar); layers up
    /// to `network.freeze_boundary` then stay fixed.
    pub init_weights: Option<PathBuf>,
    pub threshold: f64,
    pub subgroup_keys: Vec<String>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            train_fraction: 0.85,
            split_seed: 0,
            augment: true,
            augment_seed: 0,
            network: default_config(),
            norm: NormMode::Unit,
            train: TrainConfig::default(),
            init_seed: 0,
            init_weights: None,
            threshold: crate::eval::DEFAULT_THRESHOLD,
            subgroup_keys: vec!["sex".into(), "skin_tone".into()],
        }
    }
}

/// The pipeline config file. Every field has a default; relative paths are
/// resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Working directory for the registry, state, feedback and run reports.
    pub data_dir: PathBuf,
    /// The dataset manifest the pipeline trains on.
    pub manifest: Option<PathBuf>,
    /// Reference profile for value-skew checks; defaults to the profile
    /// stored by the last completed run.
    pub reference_profile: Option<PathBuf>,
    pub trigger: TriggerConfig,
    pub gate: GateConfig,
    pub skew: SkewThresholds,
    pub training: TrainingSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("lesionpipe-data"),
            manifest: None,
            reference_profile: None,
            trigger: TriggerConfig::default(),
            gate: GateConfig::default(),
            skew: SkewThresholds::default(),
            training: TrainingSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = super::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data_dir);
        cfg.manifest.as_mut().map(fix);
        cfg.reference_profile.as_mut().map(fix);
        cfg.training.init_weights.as_mut().map(fix);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.trigger.validate()?;
        self.gate.validate()?;
        let t = &self.training;
        if !(t.train_fraction > 0.0 && t.train_fraction < 1.0) {
            return Err(PipelineError::InvalidConfig(format!("train_fraction must lie in (0, 1), got {}", t.train_fraction)));
        }
        if !(0.0..=1.0).contains(&t.threshold) {
            return Err(PipelineError::InvalidConfig(format!("threshold must lie in [0, 1], got {}", t.threshold)));
        }
        t.network.resolve()?;
        t.train.validate()?;
        Ok(())
    }
}

//! The continuous-training loop: skew validation, retraining triggers,
//! clinician feedback, the promotion gate, the model registry and the
//! orchestrated run.

mod config;
mod feedback;
mod gate;
mod registry;
mod run;
mod skew;
mod state;
mod triggers;

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use config::{PipelineConfig, TrainingSection};
pub use feedback::{FeedbackRecord, FeedbackStore, Verdict};
pub use gate::{gate_candidate, GateConfig, GateDecision, GateReason, Scored};
pub use registry::{is_legal, EventKind, JournalEvent, ModelVersion, Registry, RegistryState, Stage, VersionEntry};
pub use run::{
    current_triggers, evaluate_model, triggers_with, new_run_id, no_deploy, run_pipeline, run_pipeline_as, DeployHook, PipelineRunReport, RunLock,
    StageName, StageOutcome, StageStatus, Workspace,
};
pub use skew::{validate_schema, validate_values, Finding, FindingCode, SchemaExpectations, SkewKind, SkewReport, SkewThresholds};
pub use state::PipelineState;
pub use triggers::{check_triggers, rolling_accuracy, Trigger, TriggerConfig, TriggerDecision};

use crate::data::DataError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown model version {0}")]
    UnknownVersion(u64),
    #[error("ILLEGAL_TRANSITION: v{version} cannot move from {from} to {to}")]
    IllegalTransition { version: u64, from: Stage, to: Stage },
    #[error("corrupt registry journal: {0}")]
    Journal(String),
    #[error("test sets differ (candidate {candidate}, incumbent {incumbent}); refusing to gate")]
    DigestMismatch { candidate: String, incumbent: String },
    #[error("a pipeline run is already in progress")]
    RunInProgress,
    #[error("feedback for request {0} already recorded")]
    DuplicateFeedback(String),
    #[error("incorrect verdict for request {0} needs a true_label")]
    MissingTrueLabel(String),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Json { path: path.to_path_buf(), message: e.to_string() })
}

pub(crate) fn read_json_opt<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, PipelineError> {
    if !path.exists() {
        return Ok(None);
    }
    read_json(path).map(Some)
}

/// Writes via a temporary file and rename so readers never see a partial document.
pub(crate) fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, serde_json::to_vec_pretty(value).expect("value serializes")).map_err(|e| PipelineError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

/// Reads a JSON-lines file; a missing file reads as empty.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(PipelineError::io(path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Json { path: path.to_path_buf(), message: format!("line {}: {e}", i + 1) })
        })
        .collect()
}

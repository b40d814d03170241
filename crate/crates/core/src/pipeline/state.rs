use std::collections::BTreeSet;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{read_json_opt, write_json_atomic, PipelineError, Trigger};

/// Trigger clocks and the dataset-size watermark.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineState {
    pub last_train_time: Option<DateTime<Utc>>,
    pub dataset_size_at_last_train: usize,
    pub current_dataset_size: usize,
    pub pending_triggers: BTreeSet<Trigger>,
    pub last_run: Option<String>,
}

impl PipelineState {
    /// Reads `state.json`, or the initial state when the file does not exist.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Ok(read_json_opt(path)?.unwrap_or_default())
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        write_json_atomic(path, self)
    }

    /// Records a completed run over `dataset_size` samples.
    pub fn mark_trained(&mut self, at: DateTime<Utc>, dataset_size: usize, run_id: &str) {
        self.last_train_time = Some(at);
        self.dataset_size_at_last_train = dataset_size;
        self.current_dataset_size = dataset_size;
        self.pending_triggers.clear();
        self.last_run = Some(run_id.to_string());
    }
}

//! Clinician verdicts on served classifications.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{read_jsonl, PipelineError};
use crate::data::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub request_id: String,
    pub model_version: u64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<Label>,
    pub submitted_at: DateTime<Utc>,
}

impl FeedbackRecord {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.verdict == Verdict::Incorrect && self.true_label.is_none() {
            return Err(PipelineError::MissingTrueLabel(self.request_id.clone()));
        }
        Ok(())
    }
}

/// Append-only feedback log, one JSON object per line. Each request id may
/// receive feedback once.
#[derive(Debug, Default)]
pub struct FeedbackStore {
    path: Option<PathBuf>,
    records: Vec<FeedbackRecord>,
    seen: HashSet<String>,
}

impl FeedbackStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) the log at `path`, replaying existing lines.
    pub fn open(path: &Path) -> Result<Self, PipelineError> {
        let records: Vec<FeedbackRecord> = read_jsonl(path)?;
        let seen = records.iter().map(|r| r.request_id.clone()).collect();
        Ok(Self { path: Some(path.to_path_buf()), records, seen })
    }

    pub fn contains(&self, request_id: &str) -> bool {
        self.seen.contains(request_id)
    }

    pub fn append(&mut self, record: FeedbackRecord) -> Result<(), PipelineError> {
        record.validate()?;
        if self.seen.contains(&record.request_id) {
            return Err(PipelineError::DuplicateFeedback(record.request_id));
        }
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&record).expect("feedback serializes");
            line.push('\n');
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| PipelineError::io(path, e))?;
            f.write_all(line.as_bytes()).map_err(|e| PipelineError::io(path, e))?;
        }
        self.seen.insert(record.request_id.clone());
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[FeedbackRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records that count toward the rolling window: only those attributed to
    /// `production` unless `all_versions` is set. Oldest first.
    pub fn window_records(&self, production: Option<u64>, all_versions: bool) -> Vec<FeedbackRecord> {
        self.records
            .iter()
            .filter(|r| all_versions || Some(r.model_version) == production)
            .cloned()
            .collect()
    }
}

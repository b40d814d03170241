//! Versioned model store with staging, production and archived stages.
//!
//! State lives in an append-only journal (`registry.jsonl`) next to the
//! weight files and per-version evaluation reports under `models/`. Opening
//! the registry replays the journal, so a crash can at worst leave orphan
//! files behind, never a dangling journal entry.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{read_json, read_jsonl, write_json_atomic, PipelineError};
use crate::eval::EvalReport;
use crate::nn::{config_sidecar, load_weights, NetworkConfig, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Staging,
    Production,
    Archived,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Staging => "staging",
            Stage::Production => "production",
            Stage::Archived => "archived",
        })
    }
}

impl std::str::FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "staging" => Ok(Stage::Staging),
            "production" => Ok(Stage::Production),
            "archived" => Ok(Stage::Archived),
            other => Err(PipelineError::InvalidConfig(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Register,
    Transition,
}

/// One journal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEvent {
    pub event: EventKind,
    pub version: u64,
    pub stage: Stage,
    pub digest: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VersionEntry {
    pub stage: Stage,
    pub digest: String,
    pub created_at: DateTime<Utc>,
}

/// The registry's pure state machine, rebuilt from journal events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegistryState {
    versions: BTreeMap<u64, VersionEntry>,
}

pub fn is_legal(from: Stage, to: Stage) -> bool {
    matches!(
        (from, to),
        (Stage::Staging, Stage::Production) | (Stage::Production, Stage::Archived) | (Stage::Staging, Stage::Archived)
    )
}

impl RegistryState {
    pub fn next_id(&self) -> u64 {
        self.versions.keys().next_back().map_or(1, |v| v + 1)
    }

    pub fn get(&self, version: u64) -> Option<&VersionEntry> {
        self.versions.get(&version)
    }

    pub fn versions(&self) -> impl Iterator<Item = (u64, &VersionEntry)> {
        self.versions.iter().map(|(&k, v)| (k, v))
    }

    pub fn production(&self) -> Option<u64> {
        self.versions.iter().find(|(_, e)| e.stage == Stage::Production).map(|(&k, _)| k)
    }

    pub fn production_count(&self) -> usize {
        self.versions.values().filter(|e| e.stage == Stage::Production).count()
    }

    /// Validates a transition without applying it.
    pub fn check_transition(&self, version: u64, to: Stage) -> Result<(), PipelineError> {
        let from = self.versions.get(&version).ok_or(PipelineError::UnknownVersion(version))?.stage;
        if !is_legal(from, to) {
            return Err(PipelineError::IllegalTransition { version, from, to });
        }
        Ok(())
    }

    /// Applies one event. Promotion to production archives the previous
    /// production version in the same step.
    pub fn apply(&mut self, ev: &JournalEvent) -> Result<(), PipelineError> {
        match ev.event {
            EventKind::Register => {
                if ev.version != self.next_id() || ev.stage != Stage::Staging {
                    return Err(PipelineError::Journal(format!("out-of-order registration of version {}", ev.version)));
                }
                self.versions.insert(ev.version, VersionEntry { stage: Stage::Staging, digest: ev.digest.clone(), created_at: ev.at });
            }
            EventKind::Transition => {
                self.check_transition(ev.version, ev.stage)?;
                if ev.stage == Stage::Production {
                    if let Some(prev) = self.production() {
                        self.versions.get_mut(&prev).expect("present").stage = Stage::Archived;
                    }
                }
                self.versions.get_mut(&ev.version).expect("checked").stage = ev.stage;
            }
        }
        Ok(())
    }
}

/// Everything known about one registered version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVersion {
    pub version_id: u64,
    pub stage: Stage,
    pub weights_path: PathBuf,
    pub eval: EvalReport,
    /// Digest of the test manifest `eval` was computed on.
    pub test_digest: String,
    pub trained_on_manifest_digest: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredEval {
    test_digest: String,
    report: EvalReport,
}

#[derive(Debug)]
pub struct Registry {
    root: PathBuf,
    state: RegistryState,
}

impl Registry {
    pub fn journal_path(root: &Path) -> PathBuf {
        root.join("registry.jsonl")
    }

    /// Opens the registry rooted at `root`, replaying its journal.
    pub fn open(root: &Path) -> Result<Self, PipelineError> {
        let mut state = RegistryState::default();
        for ev in read_jsonl::<JournalEvent>(&Self::journal_path(root))? {
            state.apply(&ev)?;
        }
        Ok(Self { root: root.to_path_buf(), state })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn state(&self) -> &RegistryState {
        &self.state
    }

    pub fn weights_path(&self, version: u64) -> PathBuf {
        self.root.join("models").join(format!("v{version}.melw"))
    }

    fn eval_path(&self, version: u64) -> PathBuf {
        self.root.join("models").join(format!("v{version}.eval.json"))
    }

    fn append(&self, ev: &JournalEvent) -> Result<(), PipelineError> {
        let path = Self::journal_path(&self.root);
        std::fs::create_dir_all(&self.root).map_err(|e| PipelineError::io(&self.root, e))?;
        let mut line = serde_json::to_string(ev).expect("event serializes");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| PipelineError::io(&path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| PipelineError::io(&path, e))?;
        f.sync_data().map_err(|e| PipelineError::io(&path, e))
    }

    /// Registers a trained model in `staging`. The weights (with their config
    /// sidecar) must load; they are copied into the registry.
    pub fn register_version(
        &mut self,
        weights_path: &Path,
        eval: &EvalReport,
        test_digest: &str,
        manifest_digest: &str,
    ) -> Result<ModelVersion, PipelineError> {
        load_weights(weights_path)?;
        let version = self.state.next_id();
        let dest = self.weights_path(version);
        let models = dest.parent().expect("has parent");
        std::fs::create_dir_all(models).map_err(|e| PipelineError::io(models, e))?;
        std::fs::copy(weights_path, &dest).map_err(|e| PipelineError::io(weights_path, e))?;
        let sidecar = config_sidecar(weights_path);
        std::fs::copy(&sidecar, config_sidecar(&dest)).map_err(|e| PipelineError::io(&sidecar, e))?;
        write_json_atomic(&self.eval_path(version), &StoredEval { test_digest: test_digest.into(), report: eval.clone() })?;
        let ev = JournalEvent {
            event: EventKind::Register,
            version,
            stage: Stage::Staging,
            digest: manifest_digest.into(),
            at: Utc::now(),
        };
        self.append(&ev)?;
        self.state.apply(&ev)?;
        self.get(version)
    }

    /// Moves a version to another stage. Promoting archives the previous
    /// production version atomically (one journal line).
    pub fn transition_stage(&mut self, version: u64, to: Stage) -> Result<ModelVersion, PipelineError> {
        self.state.check_transition(version, to)?;
        let digest = self.state.get(version).expect("checked").digest.clone();
        let ev = JournalEvent { event: EventKind::Transition, version, stage: to, digest, at: Utc::now() };
        self.append(&ev)?;
        self.state.apply(&ev)?;
        self.get(version)
    }

    pub fn get(&self, version: u64) -> Result<ModelVersion, PipelineError> {
        let entry = self.state.get(version).ok_or(PipelineError::UnknownVersion(version))?;
        let stored: StoredEval = read_json(&self.eval_path(version))?;
        Ok(ModelVersion {
            version_id: version,
            stage: entry.stage,
            weights_path: self.weights_path(version),
            eval: stored.report,
            test_digest: stored.test_digest,
            trained_on_manifest_digest: entry.digest.clone(),
            created_at: entry.created_at,
        })
    }

    pub fn list(&self) -> Result<Vec<ModelVersion>, PipelineError> {
        self.state.versions().map(|(v, _)| self.get(v)).collect()
    }

    pub fn production(&self) -> Result<Option<ModelVersion>, PipelineError> {
        self.state.production().map(|v| self.get(v)).transpose()
    }

    pub fn load_model(&self, version: u64) -> Result<(ParameterSet, NetworkConfig), PipelineError> {
        if self.state.get(version).is_none() {
            return Err(PipelineError::UnknownVersion(version));
        }
        Ok(load_weights(&self.weights_path(version))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, compact_config, save_weights};

    fn eval() -> EvalReport {
        EvalReport::compute(&[0.9, 0.1], &[crate::data::Label::Malignant, crate::data::Label::Benign], None, 0.5, &[]).unwrap()
    }

    fn weights(dir: &Path) -> PathBuf {
        let cfg = compact_config([1, 4, 4], &[2], 0);
        let path = dir.join("cand.melw");
        save_weights(&build_network(&cfg, 1).unwrap(), &cfg, &path).unwrap();
        path
    }

    #[test]
    fn lifecycle() {
        let dir = tempfile::tempdir().unwrap();
        let w = weights(dir.path());
        let mut reg = Registry::open(&dir.path().join("reg")).unwrap();
        let v1 = reg.register_version(&w, &eval(), "t", "m1").unwrap();
        assert_eq!((v1.version_id, v1.stage), (1, Stage::Staging));
        reg.transition_stage(1, Stage::Production).unwrap();
        reg.register_version(&w, &eval(), "t", "m2").unwrap();
        reg.transition_stage(2, Stage::Production).unwrap();
        assert_eq!(reg.get(1).unwrap().stage, Stage::Archived);
        assert_eq!(reg.production().unwrap().unwrap().version_id, 2);
        assert!(matches!(reg.transition_stage(1, Stage::Production), Err(PipelineError::IllegalTransition { .. })));
        assert!(matches!(reg.transition_stage(9, Stage::Archived), Err(PipelineError::UnknownVersion(9))));
        reg.register_version(&w, &eval(), "t", "m3").unwrap();
        reg.transition_stage(3, Stage::Archived).unwrap();

        let reopened = Registry::open(reg.root()).unwrap();
        assert_eq!(reopened.state(), reg.state());
        assert_eq!(reopened.get(1).unwrap().eval, eval());
        assert_eq!(reopened.state().next_id(), 4);
        let lines = std::fs::read_to_string(Registry::journal_path(reg.root())).unwrap();
        let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!(first["event"], "register");
        assert_eq!(first["stage"], "staging");
        assert_eq!(first["digest"], "m1");
    }

    #[test]
    fn ids_continue_after_seven() {
        let dir = tempfile::tempdir().unwrap();
        let w = weights(dir.path());
        let mut reg = Registry::open(dir.path()).unwrap();
        for _ in 0..7 {
            reg.register_version(&w, &eval(), "t", "m").unwrap();
        }
        assert_eq!(reg.register_version(&w, &eval(), "t", "m").unwrap().version_id, 8);
    }

    #[test]
    fn unloadable_weights_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.melw");
        std::fs::write(&bad, b"garbage").unwrap();
        let mut reg = Registry::open(dir.path()).unwrap();
        assert!(reg.register_version(&bad, &eval(), "t", "m").is_err());
        assert_eq!(reg.state().next_id(), 1);
    }
}

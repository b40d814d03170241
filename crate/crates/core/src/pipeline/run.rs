//! One orchestrated retraining run: validate, split, augment, train,
//! evaluate, gate, register, promote and deploy.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{
    check_triggers, gate_candidate, read_json_opt, validate_schema, validate_values, write_json_atomic, FeedbackStore, GateDecision,
    ModelVersion, PipelineConfig, PipelineError, PipelineState, Registry, SchemaExpectations, Scored, SkewReport, Stage, Trigger,
    TriggerDecision,
};
use crate::augment::{apply_plan, plan_augmentation};
use crate::data::{load_image, prepare_input, profile_dataset, stratified_split, DatasetManifest, DatasetProfile, ExpectedShape, RawManifest};
use crate::eval::EvalReport;
use crate::nn::{build_network, load_weights_with, predict, save_weights, train, ExampleSet, NetworkConfig, ParameterSet};

/// File layout under the pipeline's data directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn state(&self) -> PathBuf {
        self.root.join("state.json")
    }

    pub fn feedback(&self) -> PathBuf {
        self.root.join("feedback.jsonl")
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run_report(&self, run_id: &str) -> PathBuf {
        self.runs().join(format!("{run_id}.json"))
    }

    pub fn lock(&self) -> PathBuf {
        self.root.join("run.lock")
    }

    pub fn frozen_test(&self) -> PathBuf {
        self.root.join("frozen_test.json")
    }

    pub fn reference_profile(&self) -> PathBuf {
        self.root.join("reference_profile.json")
    }

    pub fn work(&self, run_id: &str) -> PathBuf {
        self.root.join("work").join(run_id)
    }

    pub fn registry(&self) -> Result<Registry, PipelineError> {
        Registry::open(&self.root)
    }
}

/// Exclusive claim on the workspace for one run; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(ws: &Workspace) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(&ws.root).map_err(|e| PipelineError::io(&ws.root, e))?;
        let path = ws.lock();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::RunInProgress),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    SchemaValidation,
    ValueValidation,
    Split,
    Augment,
    Train,
    Evaluate,
    Gate,
    Register,
    Promote,
    Deploy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: StageName,
    pub status: StageStatus,
    pub detail: String,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRunReport {
    pub run_id: String,
    pub triggers: Vec<Trigger>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub stages: Vec<StageOutcome>,
    /// First failing stage; later stages did not run.
    pub aborted_at: Option<StageName>,
    pub completed: bool,
    pub dataset_size: usize,
    pub schema: Option<SkewReport>,
    pub values: Option<SkewReport>,
    pub eval: Option<EvalReport>,
    pub gate: Option<GateDecision>,
    pub candidate_version: Option<u64>,
    pub promoted: bool,
    pub production_version: Option<u64>,
}

impl PipelineRunReport {
    pub fn stage(&self, name: StageName) -> Option<&StageOutcome> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// Run ids are UTC timestamps, which also name the report file.
pub fn new_run_id(now: DateTime<Utc>) -> String {
    now.format("%Y%m%dT%H%M%S%.3fZ").to_string()
}

/// Called with the promoted version; an error means serving kept its previous model.
pub type DeployHook<'a> = &'a (dyn Fn(&ModelVersion) -> Result<(), String> + Sync);

pub fn no_deploy(_: &ModelVersion) -> Result<(), String> {
    Ok(())
}

struct Recorder {
    report: PipelineRunReport,
}

impl Recorder {
    /// Runs one stage, recording its outcome; `Err` aborts the run.
    fn stage<T>(&mut self, name: StageName, f: impl FnOnce(&mut PipelineRunReport) -> Result<(T, String), String>) -> Option<T> {
        let t = Instant::now();
        let res = f(&mut self.report);
        let elapsed_ms = t.elapsed().as_millis() as u64;
        match res {
            Ok((v, detail)) => {
                self.report.stages.push(StageOutcome { stage: name, status: StageStatus::Ok, detail, elapsed_ms });
                Some(v)
            }
            Err(detail) => {
                self.report.stages.push(StageOutcome { stage: name, status: StageStatus::Failed, detail, elapsed_ms });
                self.report.aborted_at = Some(name);
                None
            }
        }
    }

    fn skip(&mut self, name: StageName, detail: impl Into<String>) {
        self.report.stages.push(StageOutcome { stage: name, status: StageStatus::Skipped, detail: detail.into(), elapsed_ms: 0 });
    }
}

fn schema_expectations(net: &NetworkConfig) -> SchemaExpectations {
    let [c, h, w] = net.input_shape;
    SchemaExpectations { shape: ExpectedShape { width: w, height: h, channels: c } }
}

fn load_examples(m: &DatasetManifest, net: &NetworkConfig, cfg: &PipelineConfig) -> Result<ExampleSet, PipelineError> {
    let load = |r: &crate::data::SampleRecord| -> Result<Vec<f32>, PipelineError> {
        Ok(prepare_input(&load_image(&r.image_path)?, net.input_shape, cfg.training.norm)?.into_data())
    };
    #[cfg(feature = "parallel")]
    let tensors: Vec<Vec<f32>> = {
        use rayon::prelude::*;
        m.records.par_iter().map(load).collect::<Result<_, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let tensors: Vec<Vec<f32>> = m.records.iter().map(load).collect::<Result<_, _>>()?;
    let mut set = ExampleSet::new(net.input_shape);
    for (t, r) in tensors.iter().zip(&m.records) {
        set.push(t, r.label)?;
    }
    Ok(set)
}

/// Scores a test manifest with a model.
pub fn evaluate_model(
    params: &ParameterSet,
    net: &NetworkConfig,
    test: &DatasetManifest,
    cfg: &PipelineConfig,
) -> Result<EvalReport, PipelineError> {
    let set = load_examples(test, net, cfg)?;
    let scores: Vec<f64> = predict(params, net, &set)?.into_iter().map(f64::from).collect();
    let meta: Vec<_> = test.records.iter().map(|r| r.metadata.clone()).collect();
    let keys: Vec<&str> = cfg.training.subgroup_keys.iter().map(String::as_str).collect();
    Ok(EvalReport::compute(&scores, &set.labels(), Some(&meta), cfg.training.threshold, &keys)?)
}

/// The frozen test set, created from a stratified split on first use.
/// Returns `(train, test)`; train is every record not in the test set.
fn split(ws: &Workspace, manifest: &DatasetManifest, cfg: &PipelineConfig) -> Result<(DatasetManifest, DatasetManifest, bool), PipelineError> {
    if let Some(test) = read_json_opt::<DatasetManifest>(&ws.frozen_test())? {
        let held: HashSet<&Path> = test.records.iter().map(|r| r.image_path.as_path()).collect();
        let records = manifest.records.iter().filter(|r| !held.contains(r.image_path.as_path())).cloned().collect();
        return Ok((DatasetManifest::new(manifest.expected, records), test, false));
    }
    let plan = stratified_split(manifest, cfg.training.train_fraction, cfg.training.split_seed)?;
    let test = plan.test_manifest(manifest);
    write_json_atomic(&ws.frozen_test(), &test)?;
    Ok((plan.train_manifest(manifest), test, true))
}

/// Evaluates triggers against persisted state, the manifest's current size
/// and feedback for the production version.
pub fn current_triggers(cfg: &PipelineConfig, now: DateTime<Utc>) -> Result<(TriggerDecision, PipelineState), PipelineError> {
    let ws = Workspace::new(&cfg.data_dir);
    let production = ws.registry()?.state().production();
    let feedback = FeedbackStore::open(&ws.feedback())?;
    triggers_with(cfg, now, &feedback, production)
}

/// Like [`current_triggers`] with the feedback log and the serving version
/// supplied by the caller.
pub fn triggers_with(
    cfg: &PipelineConfig,
    now: DateTime<Utc>,
    feedback: &FeedbackStore,
    production: Option<u64>,
) -> Result<(TriggerDecision, PipelineState), PipelineError> {
    let ws = Workspace::new(&cfg.data_dir);
    let mut state = PipelineState::load(&ws.state())?;
    if let Some(m) = &cfg.manifest {
        if let Ok(raw) = RawManifest::load(m) {
            state.current_dataset_size = raw.records.len();
        }
    }
    let window = feedback.window_records(production, cfg.trigger.count_all_versions);
    Ok((check_triggers(&state, now, &window, &cfg.trigger), state))
}

/// Runs the whole pipeline once under the workspace lock and writes the
/// report to `runs/<run_id>.json`. Stage failures are recorded in the report
/// rather than returned; `Err` means the run could not start or its outcome
/// could not be persisted.
pub fn run_pipeline(cfg: &PipelineConfig, triggers: &[Trigger], deploy: DeployHook<'_>) -> Result<PipelineRunReport, PipelineError> {
    let now = Utc::now();
    run_pipeline_as(&new_run_id(now), cfg, triggers, deploy)
}

pub fn run_pipeline_as(run_id: &str, cfg: &PipelineConfig, triggers: &[Trigger], deploy: DeployHook<'_>) -> Result<PipelineRunReport, PipelineError> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.data_dir);
    let _lock = RunLock::acquire(&ws)?;
    let mut registry = ws.registry()?;
    let started_at = Utc::now();
    let mut rec = Recorder {
        report: PipelineRunReport {
            run_id: run_id.to_string(),
            triggers: triggers.to_vec(),
            started_at,
            finished_at: started_at,
            stages: Vec::new(),
            aborted_at: None,
            completed: false,
            dataset_size: 0,
            schema: None,
            values: None,
            eval: None,
            gate: None,
            candidate_version: None,
            promoted: false,
            production_version: registry.state().production(),
        },
    };
    let outcome = execute(&ws, cfg, &mut registry, &mut rec, deploy);
    let mut report = rec.report;
    report.finished_at = Utc::now();
    report.production_version = registry.state().production();
    if let Some((dataset_size, profile)) = outcome {
        report.completed = true;
        let mut state = PipelineState::load(&ws.state())?;
        state.mark_trained(report.started_at, dataset_size, run_id);
        state.save(&ws.state())?;
        write_json_atomic(&ws.reference_profile(), &profile)?;
    }
    write_json_atomic(&ws.run_report(run_id), &report)?;
    Ok(report)
}

/// Returns the dataset size and profile when every stage ran.
fn execute(
    ws: &Workspace,
    cfg: &PipelineConfig,
    registry: &mut Registry,
    rec: &mut Recorder,
    deploy: DeployHook<'_>,
) -> Option<(usize, DatasetProfile)> {
    let net = &cfg.training.network;
    let err = |e: PipelineError| e.to_string();

    let manifest = rec.stage(StageName::SchemaValidation, |r| {
        let path = cfg.manifest.as_ref().ok_or("no manifest configured")?;
        let raw = RawManifest::load(path).map_err(|e| e.to_string())?;
        let report = validate_schema(&raw, &schema_expectations(net));
        let passed = report.passed;
        let codes: Vec<String> = report.codes().iter().map(|c| c.to_string()).collect();
        r.schema = Some(report);
        if !passed {
            return Err(format!("schema skew: {}", codes.join(", ")));
        }
        let manifest = raw.into_manifest().map_err(|e| e.to_string())?;
        r.dataset_size = manifest.len();
        Ok((manifest, format!("{} records", r.dataset_size)))
    })?;

    let profile = rec.stage(StageName::ValueValidation, |r| {
        let profile = profile_dataset(&manifest).map_err(|e| e.to_string())?;
        let reference_path = cfg.reference_profile.clone().unwrap_or_else(|| ws.reference_profile());
        let reference: Option<DatasetProfile> = read_json_opt(&reference_path).map_err(err)?;
        let Some(reference) = reference else {
            return Ok((profile, "no reference profile yet; this dataset becomes the reference".into()));
        };
        let report = validate_values(&profile, &reference, &cfg.skew);
        let passed = report.passed;
        let codes: Vec<String> = report.codes().iter().map(|c| c.to_string()).collect();
        r.values = Some(report);
        if !passed {
            return Err(format!("value skew: {}", codes.join(", ")));
        }
        Ok((profile, "within thresholds".into()))
    })?;

    let (train_set, test_set) = rec.stage(StageName::Split, |_| {
        let (train, test, fresh) = split(ws, &manifest, cfg).map_err(err)?;
        train.require_both_classes().map_err(|e| e.to_string())?;
        test.require_both_classes().map_err(|e| e.to_string())?;
        let detail = format!("{} train / {} test ({})", train.len(), test.len(), if fresh { "new frozen test set" } else { "frozen test set" });
        Ok(((train, test), detail))
    })?;

    let run_id = rec.report.run_id.clone();
    let work = ws.work(&run_id);
    let train_set = if cfg.training.augment {
        rec.stage(StageName::Augment, |_| {
            let plan = plan_augmentation(&train_set.class_counts(), None).map_err(|e| e.to_string())?;
            let out = apply_plan(&train_set, &plan, cfg.training.augment_seed, &work).map_err(|e| e.to_string())?;
            let detail = format!("{} -> {} training images", train_set.len(), out.len());
            Ok((out, detail))
        })?
    } else {
        rec.skip(StageName::Augment, "disabled");
        train_set
    };

    let candidate_path = work.join("candidate.melw");
    let params = rec.stage(StageName::Train, |_| {
        let data = load_examples(&train_set, net, cfg).map_err(err)?;
        let mut params = match &cfg.training.init_weights {
            Some(p) => load_weights_with(p, net).map_err(|e| e.to_string())?,
            None => build_network(net, cfg.training.init_seed).map_err(|e| e.to_string())?,
        };
        let hist = train(&mut params, net, &data, &cfg.training.train).map_err(|e| e.to_string())?;
        save_weights(&params, net, &candidate_path).map_err(|e| e.to_string())?;
        let last = hist.last().expect("at least one epoch");
        Ok((params, format!("{} epochs, final loss {:.4}, train accuracy {:.3}", hist.epochs.len(), last.mean_loss, last.train_accuracy)))
    })?;

    let test_digest = test_set.digest();
    let eval = rec.stage(StageName::Evaluate, |r| {
        let report = evaluate_model(&params, net, &test_set, cfg).map_err(err)?;
        r.eval = Some(report.clone());
        let detail = format!("accuracy {:.4}, auc {}", report.accuracy, report.auc.map_or("n/a".into(), |a| format!("{a:.4}")));
        Ok((report, detail))
    })?;

    let decision = rec.stage(StageName::Gate, |r| {
        let incumbent = match registry.production().map_err(err)? {
            Some(v) => {
                // re-score the incumbent on today's frozen test set
                let (p, n) = registry.load_model(v.version_id).map_err(err)?;
                Some((v.version_id, evaluate_model(&p, &n, &test_set, cfg).map_err(err)?))
            }
            None => None,
        };
        let d = gate_candidate(
            Scored { report: &eval, test_digest: &test_digest },
            incumbent.as_ref().map(|(_, rep)| Scored { report: rep, test_digest: &test_digest }),
            &cfg.gate,
        )
        .map_err(err)?;
        r.gate = Some(d.clone());
        let against = incumbent.map_or("no incumbent".to_string(), |(v, _)| format!("against v{v}"));
        let detail = if d.accepted {
            format!("accepted ({against})")
        } else {
            let reasons: Vec<String> = d.reasons.iter().map(|x| serde_json::to_value(x).unwrap().as_str().unwrap().to_string()).collect();
            format!("rejected ({against}): {}", reasons.join(", "))
        };
        Ok((d, detail))
    })?;

    let version = rec.stage(StageName::Register, |r| {
        let v = registry.register_version(&candidate_path, &eval, &test_digest, &manifest.digest()).map_err(err)?;
        r.candidate_version = Some(v.version_id);
        let detail = format!("v{} in staging", v.version_id);
        Ok((v, detail))
    })?;

    if !decision.accepted {
        rec.skip(StageName::Promote, "gate rejected the candidate");
        rec.skip(StageName::Deploy, "nothing promoted");
        return Some((manifest.len(), profile));
    }
    let promoted = rec.stage(StageName::Promote, |r| {
        let v = registry.transition_stage(version.version_id, Stage::Production).map_err(err)?;
        r.promoted = true;
        Ok((v, format!("v{} in production", version.version_id)))
    })?;
    rec.stage(StageName::Deploy, |_| deploy(&promoted).map(|_| ((), format!("serving v{}", promoted.version_id))))?;
    Some((manifest.len(), profile))
}

//! Candidate-versus-incumbent promotion gate.

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::data::Label;
use crate::eval::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub accuracy_slack: f64,
    pub recall_gap_limit: f64,
    pub auc_slack: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { accuracy_slack: 0.005, recall_gap_limit: 0.15, auc_slack: 0.01 }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [("accuracy_slack", self.accuracy_slack), ("recall_gap_limit", self.recall_gap_limit), ("auc_slack", self.auc_slack)] {
            if !(0.0..1.0).contains(&v) {
                return Err(PipelineError::InvalidConfig(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GateReason {
    AccuracyRegression,
    AucRegression,
    ClassParity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub accepted: bool,
    pub reasons: Vec<GateReason>,
    /// `|benign recall - malignant recall|` of the candidate, when both are defined.
    pub recall_gap: Option<f64>,
}

/// An evaluation together with the digest of the test manifest it was computed on.
#[derive(Debug, Clone, Copy)]
pub struct Scored<'a> {
    pub report: &'a EvalReport,
    pub test_digest: &'a str,
}

// guards exact-boundary comparisons against representation error
const TOL: f64 = 1e-12;

/// Accepts when accuracy and AUC have not regressed beyond their slacks and
/// the per-class recall gap stays within the limit. Without an incumbent only
/// the parity clause applies. An undefined recall counts as a parity failure.
pub fn gate_candidate(candidate: Scored<'_>, incumbent: Option<Scored<'_>>, cfg: &GateConfig) -> Result<GateDecision, PipelineError> {
    let mut reasons = Vec::new();
    if let Some(inc) = incumbent {
        if inc.test_digest != candidate.test_digest {
            return Err(PipelineError::DigestMismatch { candidate: candidate.test_digest.into(), incumbent: inc.test_digest.into() });
        }
        if candidate.report.accuracy < inc.report.accuracy - cfg.accuracy_slack - TOL {
            reasons.push(GateReason::AccuracyRegression);
        }
        match (candidate.report.auc, inc.report.auc) {
            (Some(c), Some(i)) if c < i - cfg.auc_slack - TOL => reasons.push(GateReason::AucRegression),
            (None, Some(_)) => reasons.push(GateReason::AucRegression),
            _ => {}
        }
    }
    let m = &candidate.report.matrix;
    let recall_gap = match (m.recall_for(Label::Benign), m.recall_for(Label::Malignant)) {
        (Some(b), Some(r)) => Some((b - r).abs()),
        _ => None,
    };
    if recall_gap.is_none_or(|g| g > cfg.recall_gap_limit + TOL) {
        reasons.push(GateReason::ClassParity);
    }
    Ok(GateDecision { accepted: reasons.is_empty(), reasons, recall_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ConfusionMatrix;
    use std::collections::BTreeMap;

    /// Report with the given class recalls over 100 samples per class.
    fn report(benign_recall: f64, malignant_recall: f64, auc: f64) -> EvalReport {
        let tn = (benign_recall * 100.0).round() as u64;
        let tp = (malignant_recall * 100.0).round() as u64;
        let matrix = ConfusionMatrix { tp, fn_: 100 - tp, tn, fp: 100 - tn };
        let accuracy = (tp + tn) as f64 / 200.0;
        EvalReport { matrix, precision: None, recall: None, f1: None, accuracy, auc: Some(auc), roc: vec![], subgroups: BTreeMap::new() }
    }

    fn scored(r: &EvalReport) -> Scored<'_> {
        Scored { report: r, test_digest: "d" }
    }

    #[test]
    fn accuracy_regression() {
        let cand = report(0.95, 0.95, 0.99);
        let inc = report(0.97, 0.97, 0.99);
        let d = gate_candidate(scored(&cand), Some(scored(&inc)), &GateConfig::default()).unwrap();
        assert_eq!(d.reasons, vec![GateReason::AccuracyRegression]);
        // within the slack
        let inc = report(0.95, 0.96, 0.99);
        assert!(gate_candidate(scored(&cand), Some(scored(&inc)), &GateConfig::default()).unwrap().accepted);
    }

    #[test]
    fn parity() {
        let cand = report(0.95, 0.94, 0.99);
        assert!(gate_candidate(scored(&cand), None, &GateConfig::default()).unwrap().accepted);
        let cand = report(0.99, 0.80, 0.99);
        let d = gate_candidate(scored(&cand), None, &GateConfig::default()).unwrap();
        assert_eq!(d.reasons, vec![GateReason::ClassParity]);
        assert!((d.recall_gap.unwrap() - 0.19).abs() < 1e-12);
        // a gap of exactly the limit passes
        assert!(gate_candidate(scored(&report(0.95, 0.80, 0.99)), None, &GateConfig::default()).unwrap().accepted);
    }

    #[test]
    fn auc_regression_and_digest() {
        let cand = report(0.95, 0.95, 0.95);
        let inc = report(0.95, 0.95, 0.97);
        let d = gate_candidate(scored(&cand), Some(scored(&inc)), &GateConfig::default()).unwrap();
        assert_eq!(d.reasons, vec![GateReason::AucRegression]);
        let other = Scored { report: &inc, test_digest: "e" };
        assert!(matches!(gate_candidate(scored(&cand), Some(other), &GateConfig::default()), Err(PipelineError::DigestMismatch { .. })));
    }
}

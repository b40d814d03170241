//! Imbalance-aware evaluation with malignant as the positive class: confusion
//! matrix, precision/recall/F1, accuracy, ROC/AUC and per-subgroup accuracy gaps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Label, Metadata};

/// Decision threshold shared by evaluation and serving; `score >= threshold` is malignant.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Groups smaller than this are reported but excluded from the accuracy gap.
pub const MIN_SUBGROUP_SIZE: usize = 10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("no samples to evaluate")]
    Empty,
    #[error("ROC/AUC undefined: only {0} samples present")]
    SingleClass(Label),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Malignant, Label::Malignant) => self.tp += 1,
            (Label::Malignant, Label::Benign) => self.fp += 1,
            (Label::Benign, Label::Benign) => self.tn += 1,
            (Label::Benign, Label::Malignant) => self.fn_ += 1,
        }
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Malignant recall (sensitivity).
    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Benign recall (specificity), `tn / (tn + fp)`.
    pub fn benign_recall(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn recall_for(&self, label: Label) -> Option<f64> {
        match label {
            Label::Malignant => self.recall(),
            Label::Benign => self.benign_recall(),
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn predict_label(score: f64, threshold: f64) -> Label {
    if score >= threshold {
        Label::Malignant
    } else {
        Label::Benign
    }
}

pub fn confusion_matrix(scores: &[f64], labels: &[Label], threshold: f64) -> Result<ConfusionMatrix, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EvalError::BadThreshold(threshold));
    }
    let mut m = ConfusionMatrix::default();
    for (&s, &l) in scores.iter().zip(labels) {
        m.record(predict_label(s, threshold), l);
    }
    Ok(m)
}

/// Harmonic mean `2pr / (p + r)`; `None` when either side is undefined or both are zero.
pub fn f1_score(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    }
}

/// `(precision, recall, f1)`; undefined ratios are `None`, never 0 or 1.
pub fn precision_recall_f1(m: &ConfusionMatrix) -> (Option<f64>, Option<f64>, Option<f64>) {
    let (p, r) = (m.precision(), m.recall());
    (p, r, f1_score(p, r))
}

/// `(tp + tn) / total`
pub fn accuracy(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    ratio(m.tp + m.tn, m.total()).ok_or(EvalError::Empty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    /// Threshold of each point; the first is `+inf`, above every score.
    #[serde(skip)]
    pub thresholds: Vec<f64>,
}

/// Sweeps thresholds over the distinct scores in descending order, preceded
/// by a sentinel above the maximum. Tied scores enter at the same step.
pub fn roc_curve(scores: &[f64], labels: &[Label]) -> Result<RocCurve, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(EvalError::SingleClass(Label::Benign));
    }
    if neg == 0 {
        return Err(EvalError::SingleClass(Label::Malignant));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(t);
    }
    Ok(RocCurve { points, thresholds })
}

/// Trapezoidal area under the curve.
pub fn auc(roc: &RocCurve) -> f64 {
    roc.points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    #[serde(flatten)]
    pub matrix: ConfusionMatrix,
    pub accuracy: f64,
    pub n: u64,
    /// Set for groups below the minimum size; they do not count toward the gap.
    pub small: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub groups: BTreeMap<String, GroupStats>,
    /// Largest pairwise accuracy difference among groups with at least the minimum size.
    pub max_accuracy_gap: f64,
}

/// Group value of `key` for a record; records without it fall under `"unknown"`.
pub fn group_value(meta: &Metadata, key: &str) -> String {
    match meta.get(key) {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(serde_json::Value::Null) | None => "unknown".to_string(),
        Some(other) => other.to_string(),
    }
}

pub fn subgroup_report(scores: &[f64], labels: &[Label], metadata: &[Metadata], group_key: &str) -> Result<SubgroupReport, EvalError> {
    subgroup_report_with(scores, labels, metadata, group_key, DEFAULT_THRESHOLD, MIN_SUBGROUP_SIZE)
}

pub fn subgroup_report_with(
    scores: &[f64],
    labels: &[Label],
    metadata: &[Metadata],
    group_key: &str,
    threshold: f64,
    min_size: usize,
) -> Result<SubgroupReport, EvalError> {
    if scores.len() != labels.len() || metadata.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len().min(metadata.len()) });
    }
    let mut matrices: BTreeMap<String, ConfusionMatrix> = BTreeMap::new();
    for ((&s, &l), meta) in scores.iter().zip(labels).zip(metadata) {
        matrices.entry(group_value(meta, group_key)).or_default().record(predict_label(s, threshold), l);
    }
    let groups: BTreeMap<String, GroupStats> = matrices
        .into_iter()
        .map(|(k, m)| {
            let n = m.total();
            (k, GroupStats { matrix: m, accuracy: accuracy(&m).unwrap_or(0.0), n, small: (n as usize) < min_size })
        })
        .collect();
    let eligible: Vec<f64> = groups.values().filter(|g| !g.small).map(|g| g.accuracy).collect();
    let max_accuracy_gap = match (
        eligible.iter().copied().reduce(f64::max),
        eligible.iter().copied().reduce(f64::min),
    ) {
        (Some(hi), Some(lo)) => hi - lo,
        _ => 0.0,
    };
    Ok(SubgroupReport { groups, max_accuracy_gap })
}

/// Evaluation summary; the JSON field names are a stable interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub matrix: ConfusionMatrix,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: f64,
    /// `None` when the evaluated set holds only one class.
    pub auc: Option<f64>,
    #[serde(with = "roc_points")]
    pub roc: Vec<(f64, f64)>,
    #[serde(default)]
    pub subgroups: BTreeMap<String, SubgroupReport>,
}

mod roc_points {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(pts: &[(f64, f64)], s: S) -> Result<S::Ok, S::Error> {
        pts.iter().map(|&(a, b)| [a, b]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(f64, f64)>, D::Error> {
        Ok(Vec::<[f64; 2]>::deserialize(d)?.into_iter().map(|[a, b]| (a, b)).collect())
    }
}

impl EvalReport {
    /// Evaluates scores at `threshold`, with one subgroup table per key in `group_keys`.
    pub fn compute(
        scores: &[f64],
        labels: &[Label],
        metadata: Option<&[Metadata]>,
        threshold: f64,
        group_keys: &[&str],
    ) -> Result<EvalReport, EvalError> {
        let matrix = confusion_matrix(scores, labels, threshold)?;
        let (precision, recall, f1) = precision_recall_f1(&matrix);
        let accuracy = accuracy(&matrix)?;
        let (auc, roc) = match roc_curve(scores, labels) {
            Ok(c) => (Some(auc(&c)), c.points),
            Err(EvalError::SingleClass(_)) => (None, Vec::new()),
            Err(e) => return Err(e),
        };
        let mut subgroups = BTreeMap::new();
        if let Some(meta) = metadata {
            for key in group_keys {
                subgroups.insert(key.to_string(), subgroup_report_with(scores, labels, meta, key, threshold, MIN_SUBGROUP_SIZE)?);
            }
        }
        Ok(EvalReport { matrix, precision, recall, f1, accuracy, auc, roc, subgroups })
    }

    /// Checks the stored ratios against the ones recomputed from the matrix.
    pub fn is_consistent(&self) -> bool {
        let (p, r, f1) = precision_recall_f1(&self.matrix);
        p == self.precision && r == self.recall && f1 == self.f1 && accuracy(&self.matrix).ok() == Some(self.accuracy)
    }
}

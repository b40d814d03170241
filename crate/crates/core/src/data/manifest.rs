use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DataError;

/// Binary lesion class. Malignant is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign = 0,
    Malignant = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Benign, Label::Malignant];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Malignant
    }

    pub fn target(self) -> f32 {
        self as u8 as f32
    }

    pub fn other(self) -> Label {
        match self {
            Label::Benign => Label::Malignant,
            Label::Malignant => Label::Benign,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benign" => Ok(Label::Benign),
            "malignant" => Ok(Label::Malignant),
            other => Err(DataError::UnknownLabel(other.to_string())),
        }
    }
}

/// Metadata keys that carry meaning downstream (subgroup analysis, provenance).
pub const KNOWN_METADATA_KEYS: [&str; 5] = ["sex", "age_band", "anatomical_site", "skin_tone", "source"];

/// Allowed values of the `source` metadata key.
pub const KNOWN_SOURCES: [&str; 3] = ["archive", "clinician", "augmented"];

pub type Metadata = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(rename = "path")]
    pub image_path: PathBuf,
    pub label: Label,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: Metadata,
}

impl SampleRecord {
    pub fn new(image_path: impl Into<PathBuf>, label: Label) -> Self {
        Self { image_path: image_path.into(), label, metadata: Metadata::new() }
    }

    pub fn with_meta(mut self, key: &str, value: &str) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    /// String value of a metadata key, if present and a string.
    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).and_then(|v| v.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedShape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Default for ExpectedShape {
    fn default() -> Self {
        Self { width: 224, height: 224, channels: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub expected: ExpectedShape,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(expected: ExpectedShape, records: Vec<SampleRecord>) -> Self {
        Self { expected, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<Label, usize> {
        let mut counts: BTreeMap<Label, usize> = Label::ALL.iter().map(|&l| (l, 0)).collect();
        for r in &self.records {
            *counts.entry(r.label).or_default() += 1;
        }
        counts
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Errors unless the manifest is nonempty and contains both classes.
    pub fn require_both_classes(&self) -> Result<(), DataError> {
        if self.is_empty() {
            return Err(DataError::EmptyManifest);
        }
        for label in Label::ALL {
            if self.count(label) == 0 {
                return Err(DataError::MissingClass(label));
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> DatasetManifest {
        DatasetManifest {
            expected: self.expected,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Rewrites relative image paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for r in &mut self.records {
            if r.image_path.is_relative() {
                r.image_path = base.join(&r.image_path);
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
        }
        std::fs::write(path, self.to_json()).map_err(|e| DataError::io(path, e))
    }
}

/// A manifest record before label validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub path: PathBuf,
    pub label: String,
    #[serde(default)]
    pub metadata: Metadata,
}

/// Manifest as written on disk; labels are still free strings so schema
/// validation can report them as findings instead of failing the parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawManifest {
    pub expected: ExpectedShape,
    pub records: Vec<RawRecord>,
}

impl RawManifest {
    pub fn parse(text: &str) -> Result<Self, DataError> {
        serde_json::from_str(text).map_err(|e| DataError::Malformed(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let mut raw = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for r in &mut raw.records {
            if r.path.is_relative() {
                r.path = base.join(&r.path);
            }
        }
        Ok(raw)
    }

    pub fn into_manifest(self) -> Result<DatasetManifest, DataError> {
        let records = self
            .records
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let label = r.label.parse::<Label>().map_err(|e| match e {
                    DataError::UnknownLabel(l) => DataError::UnknownLabelAt { index: i, label: l },
                    other => other,
                })?;
                Ok(SampleRecord { image_path: r.path, label, metadata: r.metadata })
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        Ok(DatasetManifest { expected: self.expected, records })
    }
}

impl From<&DatasetManifest> for RawManifest {
    fn from(m: &DatasetManifest) -> Self {
        RawManifest {
            expected: m.expected,
            records: m
                .records
                .iter()
                .map(|r| RawRecord {
                    path: r.image_path.clone(),
                    label: r.label.to_string(),
                    metadata: r.metadata.clone(),
                })
                .collect(),
        }
    }
}

/// Reads a manifest, resolving relative image paths against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    RawManifest::load(path)?.into_manifest()
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest, DataError> {
    RawManifest::parse(text)?.into_manifest()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"{"expected":{"width":224,"height":224,"channels":3},
        "records":[{"path":"a.png","label":"benign"},
                   {"path":"b.png","label":"malignant","metadata":{"sex":"f","colour_card":7}}]}"#;

    #[test]
    fn parses_two_records() {
        let m = parse_manifest(TWO).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.records[0].label, Label::Benign);
        assert_eq!(m.records[1].label, Label::Malignant);
        // unknown keys survive the round trip
        assert_eq!(m.records[1].metadata["colour_card"], 7);
    }

    #[test]
    fn rejects_unknown_label() {
        let text = TWO.replace("\"malignant\"", "\"unknown\"");
        match parse_manifest(&text) {
            Err(DataError::UnknownLabelAt { index: 1, label }) => assert_eq!(label, "unknown"),
            other => panic!("expected UnknownLabel, got {other:?}"),
        }
        assert!(matches!("unknown".parse::<Label>(), Err(DataError::UnknownLabel(_))));
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(parse_manifest("{\"records\": 3}"), Err(DataError::Malformed(_))));
        assert!(matches!(
            parse_manifest(r#"{"expected":{"width":1,"height":1,"channels":3},"records":[{"label":"benign"}]}"#),
            Err(DataError::Malformed(_))
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(load_manifest(Path::new("/nonexistent/m.json")), Err(DataError::Io { .. })));
    }

    #[test]
    fn full_scale_totals() {
        let mut records = Vec::new();
        for (n, label, src) in [
            (13000, Label::Benign, "archive"),
            (250, Label::Benign, "clinician"),
            (5000, Label::Malignant, "archive"),
            (150, Label::Malignant, "clinician"),
        ] {
            records.extend((0..n).map(|i| SampleRecord::new(format!("{src}/{label}_{i}.png"), label).with_meta("source", src)));
        }
        let m = DatasetManifest::new(ExpectedShape::default(), records);
        let text = m.to_json();
        let back = parse_manifest(&text).unwrap();
        assert_eq!(back.len(), 18400);
        assert_eq!(back.count(Label::Benign), 13250);
        assert_eq!(back.count(Label::Malignant), 5150);
        assert_eq!(back.digest(), m.digest());
    }

    #[test]
    fn relative_paths_resolve_against_manifest_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, TWO).unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.records[0].image_path, dir.path().join("a.png"));
    }
}

//! Schema and value skew validation of incoming datasets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{inspect_image, DatasetProfile, ExpectedShape, Label, RawManifest, RawRecord, KNOWN_METADATA_KEYS, KNOWN_SOURCES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkewKind {
    Schema,
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingCode {
    ChannelMismatch,
    DimensionMismatch,
    LabelDomain,
    PixelRange,
    UnreadableFile,
    MetadataType,
    MetadataValue,
    MeanDrift,
    StdDrift,
    ClassRatioDrift,
}

impl fmt::Display for FindingCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant serializes");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub code: FindingCode,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewReport {
    pub kind: SkewKind,
    pub findings: Vec<Finding>,
    pub passed: bool,
}

impl SkewReport {
    pub fn new(kind: SkewKind, findings: Vec<Finding>) -> Self {
        let passed = findings.is_empty();
        Self { kind, findings, passed }
    }

    pub fn has(&self, code: FindingCode) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }

    pub fn codes(&self) -> Vec<FindingCode> {
        let mut c: Vec<FindingCode> = self.findings.iter().map(|f| f.code).collect();
        c.dedup();
        c
    }
}

/// What a dataset must look like to feed a given network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaExpectations {
    /// Post-resize size the manifest must declare.
    pub shape: ExpectedShape,
}

fn finding(code: FindingCode, detail: impl Into<String>) -> Finding {
    Finding { code, detail: detail.into() }
}

fn check_record(i: usize, r: &RawRecord) -> Vec<Finding> {
    let mut out = Vec::new();
    let at = format!("record {i} ({})", r.path.display());
    if r.label.parse::<Label>().is_err() {
        out.push(finding(FindingCode::LabelDomain, format!("{at}: label {:?} is not benign or malignant", r.label)));
    }
    for key in KNOWN_METADATA_KEYS {
        match r.metadata.get(key) {
            None | Some(serde_json::Value::String(_)) => {}
            Some(v) => out.push(finding(FindingCode::MetadataType, format!("{at}: metadata {key} should be a string, got {v}"))),
        }
    }
    if let Some(src) = r.metadata.get("source").and_then(|v| v.as_str()) {
        if !KNOWN_SOURCES.contains(&src) {
            out.push(finding(FindingCode::MetadataValue, format!("{at}: unknown source {src:?}")));
        }
    }
    match inspect_image(&r.path) {
        Err(e) => out.push(finding(FindingCode::UnreadableFile, format!("{at}: {e}"))),
        Ok(info) => {
            if !matches!(info.channels, 1 | 3) {
                out.push(finding(FindingCode::ChannelMismatch, format!("{at}: {} channels, expected 1 or 3", info.channels)));
            }
            if info.bits_per_channel > 8 {
                out.push(finding(
                    FindingCode::PixelRange,
                    format!("{at}: {}-bit samples exceed the 8-bit range", info.bits_per_channel),
                ));
            }
        }
    }
    out
}

/// Checks structure: declared shape, per-file decodability, channel count,
/// sample depth, label domain and metadata value types. Never fails; every
/// problem becomes a finding.
pub fn validate_schema(manifest: &RawManifest, expect: &SchemaExpectations) -> SkewReport {
    let mut findings = Vec::new();
    let (got, want) = (manifest.expected, expect.shape);
    if (got.width, got.height) != (want.width, want.height) {
        findings.push(finding(
            FindingCode::DimensionMismatch,
            format!("manifest resizes to {}x{}, model expects {}x{}", got.width, got.height, want.width, want.height),
        ));
    }
    if got.channels != want.channels {
        findings.push(finding(
            FindingCode::ChannelMismatch,
            format!("manifest declares {} channels, model expects {}", got.channels, want.channels),
        ));
    }
    #[cfg(feature = "parallel")]
    let per_record: Vec<Vec<Finding>> = {
        use rayon::prelude::*;
        manifest.records.par_iter().enumerate().map(|(i, r)| check_record(i, r)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_record: Vec<Vec<Finding>> = manifest.records.iter().enumerate().map(|(i, r)| check_record(i, r)).collect();
    findings.extend(per_record.into_iter().flatten());
    SkewReport::new(SkewKind::Schema, findings)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewThresholds {
    /// Largest tolerated per-channel mean shift, in unit-normalized intensity.
    pub mean: f64,
    pub std: f64,
    /// Largest tolerated relative change of the benign/malignant ratio.
    pub class_ratio: f64,
}

impl Default for SkewThresholds {
    fn default() -> Self {
        Self { mean: 0.10, std: 0.10, class_ratio: 0.25 }
    }
}

/// Compares a candidate profile against the reference; a finding per
/// exceeded threshold. Exactly-at-threshold shifts pass.
pub fn validate_values(candidate: &DatasetProfile, reference: &DatasetProfile, t: &SkewThresholds) -> SkewReport {
    let mut findings = Vec::new();
    if candidate.per_channel_mean.len() != reference.per_channel_mean.len() {
        findings.push(finding(
            FindingCode::ChannelMismatch,
            format!("{} channels vs reference {}", candidate.per_channel_mean.len(), reference.per_channel_mean.len()),
        ));
        return SkewReport::new(SkewKind::Value, findings);
    }
    let channels = candidate.per_channel_mean.iter().zip(&reference.per_channel_mean);
    for (c, (a, b)) in channels.enumerate() {
        if (a - b).abs() > t.mean {
            findings.push(finding(FindingCode::MeanDrift, format!("channel {c}: mean {a:.4} vs reference {b:.4}")));
        }
    }
    for (c, (a, b)) in candidate.per_channel_std.iter().zip(&reference.per_channel_std).enumerate() {
        if (a - b).abs() > t.std {
            findings.push(finding(FindingCode::StdDrift, format!("channel {c}: std {a:.4} vs reference {b:.4}")));
        }
    }
    let rel = (candidate.class_ratio - reference.class_ratio).abs() / reference.class_ratio;
    if rel > t.class_ratio {
        findings.push(finding(
            FindingCode::ClassRatioDrift,
            format!("class ratio {:.3} vs reference {:.3} ({:+.1}%)", candidate.class_ratio, reference.class_ratio, 100.0 * rel),
        ));
    }
    SkewReport::new(SkewKind::Value, findings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Metadata, PixelImage};

    fn profile(mean: f64, std: f64, ratio: f64) -> DatasetProfile {
        DatasetProfile { per_channel_mean: vec![mean; 3], per_channel_std: vec![std; 3], class_ratio: ratio, count: 100 }
    }

    #[test]
    fn values_against_self_pass() {
        let p = profile(0.4, 0.2, 2.573);
        let r = validate_values(&p, &p, &SkewThresholds::default());
        assert!(r.passed && r.findings.is_empty());
    }

    #[test]
    fn value_drifts() {
        let reference = profile(0.4, 0.2, 2.57);
        let mut shifted = reference.clone();
        shifted.per_channel_mean[1] += 0.2;
        assert_eq!(validate_values(&shifted, &reference, &SkewThresholds::default()).codes(), vec![FindingCode::MeanDrift]);
        let r = validate_values(&profile(0.4, 0.4, 2.57), &reference, &SkewThresholds::default());
        assert_eq!(r.codes(), vec![FindingCode::StdDrift]);
        // (3.50 - 2.57) / 2.57 = 0.3619
        let r = validate_values(&profile(0.4, 0.2, 3.50), &reference, &SkewThresholds::default());
        assert_eq!(r.codes(), vec![FindingCode::ClassRatioDrift]);
        assert!(r.findings[0].detail.contains("+36.2%"));
        assert!(!r.passed);
        // +20% stays under the 25% limit
        assert!(validate_values(&profile(0.4, 0.2, 2.57 * 1.2), &reference, &SkewThresholds::default()).passed);
    }

    fn raw_with(dir: &std::path::Path, img: image::DynamicImage, label: &str, meta: Metadata) -> RawManifest {
        let path = dir.join("x.png");
        img.save(&path).unwrap();
        RawManifest {
            expected: ExpectedShape { width: 8, height: 8, channels: 3 },
            records: vec![RawRecord { path, label: label.into(), metadata: meta }],
        }
    }

    fn expect8() -> SchemaExpectations {
        SchemaExpectations { shape: ExpectedShape { width: 8, height: 8, channels: 3 } }
    }

    #[test]
    fn schema_findings() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = PixelImage::filled(8, 8, 3, 90).unwrap().to_dynamic();
        let clean = raw_with(dir.path(), rgb.clone(), "benign", Metadata::new());
        assert!(validate_schema(&clean, &expect8()).passed);

        let rgba = image::DynamicImage::ImageRgba8(image::RgbaImage::new(8, 8));
        assert_eq!(validate_schema(&raw_with(dir.path(), rgba, "benign", Metadata::new()), &expect8()).codes(), vec![FindingCode::ChannelMismatch]);

        let r = validate_schema(&raw_with(dir.path(), rgb.clone(), "melanoma?", Metadata::new()), &expect8());
        assert_eq!(r.codes(), vec![FindingCode::LabelDomain]);

        let deep = image::DynamicImage::ImageRgb16(image::ImageBuffer::from_pixel(8, 8, image::Rgb([60000u16, 0, 0])));
        assert_eq!(validate_schema(&raw_with(dir.path(), deep, "benign", Metadata::new()), &expect8()).codes(), vec![FindingCode::PixelRange]);

        let meta: Metadata = [("age_band".to_string(), serde_json::json!(42)), ("source".to_string(), serde_json::json!("web"))].into();
        let r = validate_schema(&raw_with(dir.path(), rgb.clone(), "benign", meta), &expect8());
        assert_eq!(r.codes(), vec![FindingCode::MetadataType, FindingCode::MetadataValue]);

        let mut missing = clean.clone();
        missing.records[0].path = dir.path().join("nope.png");
        assert_eq!(validate_schema(&missing, &expect8()).codes(), vec![FindingCode::UnreadableFile]);

        let mut resized = clean.clone();
        resized.expected.width = 16;
        assert_eq!(validate_schema(&resized, &expect8()).codes(), vec![FindingCode::DimensionMismatch]);
    }

    #[test]
    fn grayscale_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let gray = PixelImage::filled(8, 8, 1, 30).unwrap().to_dynamic();
        assert!(validate_schema(&raw_with(dir.path(), gray, "malignant", Metadata::new()), &expect8()).passed);
    }

    #[test]
    fn codes_render_screaming_case() {
        assert_eq!(FindingCode::ClassRatioDrift.to_string(), "CLASS_RATIO_DRIFT");
    }
}

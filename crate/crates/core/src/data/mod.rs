//! Dataset ingestion: images, manifests, resizing, normalization, stratified
//! splitting and reference profiles.

mod image;
mod manifest;
mod profile;
mod split;
mod tensor;

use std::path::{Path, PathBuf};

pub use self::image::{inspect_image, load_image, resize_bilinear, ImageInfo, PixelImage};
pub(crate) use self::image::round_half_up_u8;
pub use manifest::{
    load_manifest, parse_manifest, DatasetManifest, ExpectedShape, Label, Metadata, RawManifest, RawRecord,
    SampleRecord, KNOWN_METADATA_KEYS, KNOWN_SOURCES,
};
pub use profile::{profile_dataset, profile_images, DatasetProfile, ProfileAccumulator};
pub use split::{stratified_split, train_count, SplitPlan};
pub use tensor::{denormalize, normalize, prepare_input, FeatureTensor, NormMode};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Malformed(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("record {index}: unknown label {label:?}")]
    UnknownLabelAt { index: usize, label: String },
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("target dimensions must be at least 1")]
    ZeroDimension,
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("manifest has no {0} samples")]
    MissingClass(Label),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }

    /// True for errors that mean a manifest record's label is outside the class domain.
    pub fn is_unknown_label(&self) -> bool {
        matches!(self, DataError::UnknownLabel(_) | DataError::UnknownLabelAt { .. })
    }
}

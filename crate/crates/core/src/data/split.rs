use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetManifest, Label};
use crate::rng::{derive_seed, seeded};

/// Stratified train/test partition of a manifest, by record index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitPlan {
    pub fn train_manifest(&self, manifest: &DatasetManifest) -> DatasetManifest {
        manifest.subset(&self.train)
    }

    pub fn test_manifest(&self, manifest: &DatasetManifest) -> DatasetManifest {
        manifest.subset(&self.test)
    }
}

/// Number of training samples taken from a class of size `n`.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    // guards products like 0.85 * 20 landing a hair under the integer
    ((train_fraction * n as f64) + 1e-9).floor() as usize
}

/// Per class: seeded shuffle, then `floor(fraction * n)` into train and the rest into test.
pub fn stratified_split(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<SplitPlan, DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }
    manifest.require_both_classes()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in Label::ALL {
        let mut idx: Vec<usize> = manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        let mut rng = seeded(derive_seed(seed, &[label as u64]));
        idx.shuffle(&mut rng);
        let k = train_count(idx.len(), train_fraction);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    Ok(SplitPlan { train, test, train_fraction, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ExpectedShape, SampleRecord};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn manifest(benign: usize, malignant: usize) -> DatasetManifest {
        let records = (0..benign)
            .map(|i| SampleRecord::new(format!("b{i}.png"), Label::Benign))
            .chain((0..malignant).map(|i| SampleRecord::new(format!("m{i}.png"), Label::Malignant)))
            .collect();
        DatasetManifest::new(ExpectedShape::default(), records)
    }

    #[test]
    fn full_scale_benign_split() {
        let plan = stratified_split(&manifest(13250, 5150), 0.85, 7).unwrap();
        let m = manifest(13250, 5150);
        let train = plan.train_manifest(&m);
        let test = plan.test_manifest(&m);
        assert_eq!(train.count(Label::Benign), 11262);
        assert_eq!(test.count(Label::Benign), 1988);
        // 0.85 * 5150 = 4377.5, floor gives 4377 against the reference 4376
        assert_eq!(train.count(Label::Malignant), 4377);
        assert_eq!(test.count(Label::Malignant), 773);
    }

    #[test]
    fn exact_floor_small() {
        assert_eq!(train_count(20, 0.85), 17);
        let plan = stratified_split(&manifest(20, 20), 0.85, 1).unwrap();
        assert_eq!(plan.train.len(), 34);
        assert_eq!(plan.test.len(), 6);
    }

    #[test]
    fn deterministic() {
        let m = manifest(50, 31);
        assert_eq!(stratified_split(&m, 0.7, 99).unwrap(), stratified_split(&m, 0.7, 99).unwrap());
        assert_ne!(stratified_split(&m, 0.7, 99).unwrap().train, stratified_split(&m, 0.7, 100).unwrap().train);
    }

    #[test]
    fn rejects_single_class_and_bad_fraction() {
        assert!(matches!(stratified_split(&manifest(10, 0), 0.8, 0), Err(DataError::MissingClass(Label::Malignant))));
        assert!(matches!(stratified_split(&manifest(10, 10), 1.0, 0), Err(DataError::InvalidFraction(_))));
        assert!(matches!(stratified_split(&manifest(10, 10), 0.0, 0), Err(DataError::InvalidFraction(_))));
    }

    proptest! {
        #[test]
        fn partition_property(b in 1usize..60, mal in 1usize..60, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let m = manifest(b, mal);
            let plan = stratified_split(&m, frac, seed).unwrap();
            let train: BTreeSet<_> = plan.train.iter().copied().collect();
            let test: BTreeSet<_> = plan.test.iter().copied().collect();
            prop_assert_eq!(train.len(), plan.train.len());
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(train.len() + test.len(), m.len());
            let tm = plan.train_manifest(&m);
            prop_assert_eq!(tm.count(Label::Benign), (frac * b as f64 + 1e-9).floor() as usize);
            prop_assert_eq!(tm.count(Label::Malignant), (frac * mal as f64 + 1e-9).floor() as usize);
        }
    }
}

use serde::{Deserialize, Serialize};

use super::{load_image, resize_bilinear, DataError, DatasetManifest, Label, PixelImage};

/// Reference statistics of a dataset, compared across runs to detect value skew.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    /// Per-channel mean of unit-normalized pixels.
    pub per_channel_mean: Vec<f64>,
    /// Per-channel population standard deviation of unit-normalized pixels.
    pub per_channel_std: Vec<f64>,
    /// benign count / malignant count
    pub class_ratio: f64,
    pub count: usize,
}

/// Order-independent sum / sum-of-squares accumulator.
#[derive(Debug, Clone, Default)]
pub struct ProfileAccumulator {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    pixels: u64,
    benign: usize,
    malignant: usize,
}

impl ProfileAccumulator {
    pub fn new(channels: usize) -> Self {
        Self { sum: vec![0.0; channels], sum_sq: vec![0.0; channels], ..Default::default() }
    }

    pub fn add(&mut self, image: &PixelImage, label: Label) -> Result<(), DataError> {
        let ch = self.sum.len();
        let image = if image.channels() == ch { image.clone() } else { image.to_rgb() };
        if image.channels() != ch {
            return Err(DataError::ShapeMismatch { expected: ch, actual: image.channels() });
        }
        // integer sums are exact, so the result does not depend on visit order
        let mut s = vec![0u64; ch];
        let mut sq = vec![0u64; ch];
        for px in image.data().chunks_exact(ch) {
            for (c, &v) in px.iter().enumerate() {
                s[c] += v as u64;
                sq[c] += (v as u64) * (v as u64);
            }
        }
        for c in 0..ch {
            self.sum[c] += s[c] as f64 / 255.0;
            self.sum_sq[c] += sq[c] as f64 / (255.0 * 255.0);
        }
        self.pixels += (image.width() * image.height()) as u64;
        match label {
            Label::Benign => self.benign += 1,
            Label::Malignant => self.malignant += 1,
        }
        Ok(())
    }

    pub fn merge(mut self, other: ProfileAccumulator) -> Self {
        if self.sum.is_empty() {
            return other;
        }
        for c in 0..self.sum.len() {
            self.sum[c] += other.sum.get(c).copied().unwrap_or(0.0);
            self.sum_sq[c] += other.sum_sq.get(c).copied().unwrap_or(0.0);
        }
        self.pixels += other.pixels;
        self.benign += other.benign;
        self.malignant += other.malignant;
        self
    }

    pub fn finish(self) -> Result<DatasetProfile, DataError> {
        if self.benign + self.malignant == 0 {
            return Err(DataError::EmptyManifest);
        }
        if self.malignant == 0 {
            return Err(DataError::MissingClass(Label::Malignant));
        }
        if self.benign == 0 {
            return Err(DataError::MissingClass(Label::Benign));
        }
        let n = self.pixels as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let std = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt())
            .collect();
        Ok(DatasetProfile {
            per_channel_mean: mean,
            per_channel_std: std,
            class_ratio: self.benign as f64 / self.malignant as f64,
            count: self.benign + self.malignant,
        })
    }
}

/// Profiles in-memory labeled images.
pub fn profile_images<'a>(
    items: impl IntoIterator<Item = (&'a PixelImage, Label)>,
    channels: usize,
) -> Result<DatasetProfile, DataError> {
    let mut acc = ProfileAccumulator::new(channels);
    for (img, label) in items {
        acc.add(img, label)?;
    }
    acc.finish()
}

/// Loads every record, resizes it to the manifest's expected size and accumulates statistics.
pub fn profile_dataset(manifest: &DatasetManifest) -> Result<DatasetProfile, DataError> {
    let e = manifest.expected;
    let visit = |r: &crate::data::SampleRecord| -> Result<ProfileAccumulator, DataError> {
        let img = resize_bilinear(&load_image(&r.image_path)?, e.width, e.height)?;
        let mut acc = ProfileAccumulator::new(e.channels);
        acc.add(&img, r.label)?;
        Ok(acc)
    };
    #[cfg(feature = "parallel")]
    let acc = {
        use rayon::prelude::*;
        manifest
            .records
            .par_iter()
            .map(visit)
            .try_reduce(ProfileAccumulator::default, |a, b| Ok(a.merge(b)))?
    };
    #[cfg(not(feature = "parallel"))]
    let acc = manifest
        .records
        .iter()
        .map(visit)
        .try_fold(ProfileAccumulator::default(), |a, b| b.map(|b| a.merge(b)))?;
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_black() {
        let img = PixelImage::filled(4, 4, 3, 0).unwrap();
        let p = profile_images([(&img, Label::Benign), (&img, Label::Malignant)], 3).unwrap();
        assert_eq!(p.per_channel_mean, vec![0.0; 3]);
        assert_eq!(p.per_channel_std, vec![0.0; 3]);
    }

    #[test]
    fn two_point_distribution() {
        let black = PixelImage::filled(3, 3, 3, 0).unwrap();
        let white = PixelImage::filled(3, 3, 3, 255).unwrap();
        let p = profile_images([(&black, Label::Benign), (&white, Label::Malignant)], 3).unwrap();
        for c in 0..3 {
            assert!((p.per_channel_mean[c] - 0.5).abs() < 1e-12);
            assert!((p.per_channel_std[c] - 0.5).abs() < 1e-12);
        }
        assert_eq!(p.count, 2);
    }

    #[test]
    fn full_scale_class_ratio() {
        let img = PixelImage::filled(1, 1, 3, 10).unwrap();
        let items = (0..13250)
            .map(|_| (&img, Label::Benign))
            .chain((0..5150).map(|_| (&img, Label::Malignant)));
        let p = profile_images(items, 3).unwrap();
        assert!((p.class_ratio - 2.573).abs() < 1e-3);
    }

    #[test]
    fn doubling_dataset_is_invariant() {
        let a = PixelImage::from_fn(5, 5, 3, |x, y, c| (x * 50 + y * 9 + c * 3) as u8).unwrap();
        let b = PixelImage::from_fn(5, 5, 3, |x, y, c| (255 - x * 20 - y - c) as u8).unwrap();
        let once = [(&a, Label::Benign), (&b, Label::Malignant)];
        let p1 = profile_images(once, 3).unwrap();
        let p2 = profile_images(once.into_iter().chain(once), 3).unwrap();
        assert_eq!(p1.class_ratio, p2.class_ratio);
        for c in 0..3 {
            assert!((p1.per_channel_mean[c] - p2.per_channel_mean[c]).abs() < 1e-12);
            assert!((p1.per_channel_std[c] - p2.per_channel_std[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn unreadable_file() {
        let m = DatasetManifest::new(
            crate::data::ExpectedShape { width: 2, height: 2, channels: 3 },
            vec![crate::data::SampleRecord::new("/no/such/file.png", Label::Benign)],
        );
        assert!(matches!(profile_dataset(&m), Err(DataError::Io { .. })));
    }
}

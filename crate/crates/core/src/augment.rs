//! Image augmentation: the training transforms (rotation, additive Gaussian
//! noise, darkening), the subgroup-balancing transforms (blur, exposure, crop,
//! rotation), and a planner that multiplies each class to a target size.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{load_image, resize_bilinear, round_half_up_u8, DataError, DatasetManifest, Label, PixelImage, SampleRecord};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("crop window of {0} pixels per side is degenerate")]
    DegenerateCrop(usize),
    #[error("{class}: target {target} is below the original count {original}")]
    TargetBelowOriginal { class: Label, target: usize, original: usize },
    #[error("{0}: class count must be positive")]
    EmptyClass(Label),
    #[error("plan has no entry for class {0}")]
    MissingClass(Label),
    #[error("plan expects {expected} {class} originals, split has {actual}")]
    PlanMismatch { class: Label, expected: usize, actual: usize },
    #[error("transform cycle is empty but copies are requested")]
    EmptyCycle,
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Rotates 90 degrees clockwise: `out(r, c) = in(H - 1 - c, r)`.
pub fn rotate90(image: &PixelImage) -> PixelImage {
    let (w, h) = (image.width(), image.height());
    // output is h wide and w tall
    PixelImage::from_fn(h, w, image.channels(), |x, y, c| image.get(y, h - 1 - x, c)).expect("rotation keeps pixel count")
}

/// Additive Gaussian noise on a random subset of pixels.
///
/// Each pixel location is selected with probability `amount`; every channel of a
/// selected pixel gets `round(g)` added with `g ~ N(0, (strength * 255)^2)`.
pub fn gaussian_noise(image: &PixelImage, amount: f64, strength: f64, seed: u64) -> Result<PixelImage, AugmentError> {
    check_unit("amount", amount)?;
    check_unit("strength", strength)?;
    let normal = Normal::new(0.0, strength * 255.0).map_err(|e| AugmentError::InvalidParam(e.to_string()))?;
    let mut rng = seeded(seed);
    let ch = image.channels();
    let mut data = image.data().to_vec();
    for px in data.chunks_exact_mut(ch) {
        if rng.random::<f64>() < amount {
            for v in px.iter_mut() {
                let g = normal.sample(&mut rng).round();
                *v = (*v as f64 + g).clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(PixelImage::new(image.width(), image.height(), ch, data)?)
}

/// Scales intensities: `clamp(round(v * factor), 0, 255)`.
pub fn adjust_brightness(image: &PixelImage, factor: f64) -> Result<PixelImage, AugmentError> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(AugmentError::InvalidParam(format!("brightness factor must be positive, got {factor}")));
    }
    let lut: Vec<u8> = (0..=255u32).map(|v| round_half_up_u8(v as f64 * factor)).collect();
    let data = image.data().iter().map(|&v| lut[v as usize]).collect();
    Ok(PixelImage::new(image.width(), image.height(), image.channels(), data)?)
}

/// Mean over a `(2r+1)^2` window with edge clamping, rounded half up.
pub fn box_blur(image: &PixelImage, radius: usize) -> Result<PixelImage, AugmentError> {
    if radius < 1 {
        return Err(AugmentError::InvalidParam("blur radius must be at least 1".into()));
    }
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let r = radius as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    // the clamped square window factors into a row pass and a column pass
    let mut rows = vec![0u64; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                rows[(y * w + x) * ch + c] =
                    (-r..=r).map(|dx| image.get(clamp(x as isize + dx, w), y, c) as u64).sum();
            }
        }
    }
    let count = ((2 * radius + 1) * (2 * radius + 1)) as u64;
    let mut data = Vec::with_capacity(w * h * ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let s: u64 = (-r..=r).map(|dy| rows[(clamp(y as isize + dy, h) * w + x) * ch + c]).sum();
                data.push(((2 * s + count) / (2 * count)) as u8);
            }
        }
    }
    Ok(PixelImage::new(w, h, ch, data)?)
}

/// Crops the centered window of `round(dim * keep_fraction)` per side and
/// resizes it back to the original dimensions.
pub fn center_crop(image: &PixelImage, keep_fraction: f64) -> Result<PixelImage, AugmentError> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(AugmentError::InvalidParam(format!("keep fraction must lie in (0, 1], got {keep_fraction}")));
    }
    let (w, h) = (image.width(), image.height());
    let cw = round_half_up_u8_free(w as f64 * keep_fraction);
    let ch_ = round_half_up_u8_free(h as f64 * keep_fraction);
    if cw == 0 || ch_ == 0 {
        return Err(AugmentError::DegenerateCrop(cw.min(ch_)));
    }
    let (x0, y0) = ((w - cw) / 2, (h - ch_) / 2);
    let cropped = PixelImage::from_fn(cw, ch_, image.channels(), |x, y, c| image.get(x0 + x, y0 + y, c))?;
    Ok(resize_bilinear(&cropped, w, h)?)
}

fn round_half_up_u8_free(v: f64) -> usize {
    (v + 0.5 + 1e-9).floor() as usize
}

fn check_unit(name: &str, v: f64) -> Result<(), AugmentError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(AugmentError::InvalidParam(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// One augmentation transform with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentOp {
    Rotate90,
    GaussianNoise { amount: f64, strength: f64 },
    /// Brightness scaled by `1 - amount`.
    Darken { amount: f64 },
    Blur { radius: usize },
    /// Brightness scaled by `factor` (> 1 brightens).
    Exposure { factor: f64 },
    Crop { fraction: f64 },
}

impl AugmentOp {
    pub fn name(&self) -> &'static str {
        match self {
            AugmentOp::Rotate90 => "rotate90",
            AugmentOp::GaussianNoise { .. } => "gaussian_noise",
            AugmentOp::Darken { .. } => "darken",
            AugmentOp::Blur { .. } => "blur",
            AugmentOp::Exposure { .. } => "exposure",
            AugmentOp::Crop { .. } => "crop",
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        match *self {
            AugmentOp::Rotate90 => Ok(()),
            AugmentOp::GaussianNoise { amount, strength } => {
                check_unit("amount", amount)?;
                check_unit("strength", strength)
            }
            AugmentOp::Darken { amount } if amount >= 1.0 => {
                Err(AugmentError::InvalidParam("darken amount must be below 1".into()))
            }
            AugmentOp::Darken { amount } => check_unit("amount", amount),
            AugmentOp::Blur { radius } if radius < 1 => Err(AugmentError::InvalidParam("radius must be >= 1".into())),
            AugmentOp::Blur { .. } => Ok(()),
            AugmentOp::Exposure { factor } if factor > 0.0 => Ok(()),
            AugmentOp::Exposure { factor } => Err(AugmentError::InvalidParam(format!("factor {factor} must be > 0"))),
            AugmentOp::Crop { fraction } if fraction > 0.0 => check_unit("fraction", fraction),
            AugmentOp::Crop { fraction } => Err(AugmentError::InvalidParam(format!("fraction {fraction} must be > 0"))),
        }
    }

    /// Applies the transform; `seed` only matters for noise.
    pub fn apply(&self, image: &PixelImage, seed: u64) -> Result<PixelImage, AugmentError> {
        match *self {
            AugmentOp::Rotate90 => Ok(rotate90(image)),
            AugmentOp::GaussianNoise { amount, strength } => gaussian_noise(image, amount, strength, seed),
            AugmentOp::Darken { amount } => adjust_brightness(image, 1.0 - amount),
            AugmentOp::Blur { radius } => box_blur(image, radius),
            AugmentOp::Exposure { factor } => adjust_brightness(image, factor),
            AugmentOp::Crop { fraction } => center_crop(image, fraction),
        }
    }
}

/// Rotation, Gaussian noise (amount 50%, strength 60%) and 30% darkening.
pub fn training_cycle() -> Vec<AugmentOp> {
    vec![
        AugmentOp::Rotate90,
        AugmentOp::GaussianNoise { amount: 0.5, strength: 0.6 },
        AugmentOp::Darken { amount: 0.3 },
    ]
}

/// Blur, exposure, crop and rotation, used to grow under-represented subgroups.
pub fn subgroup_cycle() -> Vec<AugmentOp> {
    vec![
        AugmentOp::Blur { radius: 1 },
        AugmentOp::Exposure { factor: 1.2 },
        AugmentOp::Crop { fraction: 0.8 },
        AugmentOp::Rotate90,
    ]
}

/// Default per-class multiplicity (originals included).
pub fn default_multiplicity(label: Label) -> usize {
    match label {
        Label::Benign => 3,
        Label::Malignant => 4,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPlan {
    pub originals: usize,
    /// Output count is at most `multiplicity * originals`, originals included.
    pub multiplicity: usize,
    /// Number of augmented copies to generate.
    pub generated: usize,
}

impl ClassPlan {
    pub fn multiply(originals: usize, multiplicity: usize) -> Self {
        Self { originals, multiplicity, generated: (multiplicity.max(1) - 1) * originals }
    }

    /// `k = ceil(target / n)`, generating exactly `target - n` copies.
    pub fn to_target(originals: usize, target: usize) -> Result<Self, AugmentError> {
        if target < originals {
            return Err(AugmentError::TargetBelowOriginal { class: Label::Benign, target, original: originals });
        }
        if originals == 0 {
            return Err(AugmentError::EmptyClass(Label::Benign));
        }
        Ok(Self { originals, multiplicity: target.div_ceil(originals), generated: target - originals })
    }

    pub fn output_count(&self) -> usize {
        self.originals + self.generated
    }

    /// Copies in generation order: round-robin over rounds `1..k`, each round
    /// covering every original with transform `cycle[(round - 1) % len]`; the
    /// last round is truncated when a target is set.
    pub fn schedule(&self, cycle_len: usize) -> Vec<CopyJob> {
        let mut jobs = Vec::with_capacity(self.generated);
        'outer: for round in 1..self.multiplicity {
            for original in 0..self.originals {
                if jobs.len() == self.generated {
                    break 'outer;
                }
                jobs.push(CopyJob { original, round, op_index: (round - 1) % cycle_len.max(1) });
            }
        }
        jobs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CopyJob {
    pub original: usize,
    pub round: usize,
    pub op_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub per_class: BTreeMap<Label, ClassPlan>,
    pub transform_cycle: Vec<AugmentOp>,
}

impl AugmentPlan {
    pub fn output_counts(&self) -> BTreeMap<Label, usize> {
        self.per_class.iter().map(|(&l, p)| (l, p.output_count())).collect()
    }

    pub fn total_output(&self) -> usize {
        self.per_class.values().map(ClassPlan::output_count).sum()
    }

    pub fn total_generated(&self) -> usize {
        self.per_class.values().map(|p| p.generated).sum()
    }

    pub fn with_cycle(mut self, cycle: Vec<AugmentOp>) -> Self {
        self.transform_cycle = cycle;
        self
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.total_generated() > 0 && self.transform_cycle.is_empty() {
            return Err(AugmentError::EmptyCycle);
        }
        self.transform_cycle.iter().try_for_each(AugmentOp::validate)
    }
}

/// Plans per-class multiplication. Without targets the default multiplicities
/// (benign 3, malignant 4) apply with the training transform cycle.
pub fn plan_augmentation(
    train_counts: &BTreeMap<Label, usize>,
    target_counts: Option<&BTreeMap<Label, usize>>,
) -> Result<AugmentPlan, AugmentError> {
    let mut per_class = BTreeMap::new();
    for (&label, &n) in train_counts {
        if n == 0 {
            return Err(AugmentError::EmptyClass(label));
        }
        let plan = match target_counts.and_then(|t| t.get(&label)) {
            Some(&target) => ClassPlan::to_target(n, target).map_err(|e| match e {
                AugmentError::TargetBelowOriginal { target, original, .. } => {
                    AugmentError::TargetBelowOriginal { class: label, target, original }
                }
                other => other,
            })?,
            None => ClassPlan::multiply(n, default_multiplicity(label)),
        };
        per_class.insert(label, plan);
    }
    Ok(AugmentPlan { per_class, transform_cycle: training_cycle() })
}

fn copy_seed(seed: u64, label: Label, original: usize, round: usize) -> u64 {
    derive_seed(seed, &[label as u64, original as u64, round as u64])
}

struct Job<'a> {
    label: Label,
    record: &'a SampleRecord,
    index: usize,
    copy: CopyJob,
    op: AugmentOp,
}

fn jobs_for<'a, T>(
    items: &'a [T],
    label_of: impl Fn(&T) -> Label,
    plan: &AugmentPlan,
    record_of: impl Fn(&'a T) -> &'a SampleRecord,
) -> Result<Vec<Job<'a>>, AugmentError> {
    plan.validate()?;
    let mut jobs = Vec::new();
    for (&label, class_plan) in &plan.per_class {
        let members: Vec<(usize, &T)> = items.iter().enumerate().filter(|(_, t)| label_of(t) == label).collect();
        if members.len() != class_plan.originals {
            return Err(AugmentError::PlanMismatch { class: label, expected: class_plan.originals, actual: members.len() });
        }
        for copy in class_plan.schedule(plan.transform_cycle.len()) {
            let (index, item) = members[copy.original];
            jobs.push(Job { label, record: record_of(item), index, copy, op: plan.transform_cycle[copy.op_index] });
        }
    }
    Ok(jobs)
}

fn map_jobs<R: Send>(jobs: &[Job<'_>], f: impl Fn(&Job<'_>) -> Result<R, AugmentError> + Sync + Send) -> Result<Vec<R>, AugmentError> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(f).collect()
    }
}

/// Augments in-memory samples. Output keeps the originals first, then copies in schedule order.
pub fn augment_samples(
    samples: &[(PixelImage, Label)],
    plan: &AugmentPlan,
    seed: u64,
) -> Result<Vec<(PixelImage, Label)>, AugmentError> {
    // placeholder records let the shared scheduler run over plain images
    let records: Vec<(SampleRecord, usize)> =
        samples.iter().enumerate().map(|(i, (_, l))| (SampleRecord::new("", *l), i)).collect();
    let jobs = jobs_for(&records, |(r, _)| r.label, plan, |(r, _)| r)?;
    let copies = map_jobs(&jobs, |j| {
        let img = &samples[records[j.index].1].0;
        Ok((j.op.apply(img, copy_seed(seed, j.label, j.copy.original, j.copy.round))?, j.label))
    })?;
    let mut out = samples.to_vec();
    out.extend(copies);
    Ok(out)
}

/// Generates augmented copies of a training manifest on disk.
///
/// Each copy is one transform applied to the original resized to the
/// manifest's expected size, written to `<out>/aug/<class>/<stem>_<round>.png`.
/// The returned manifest lists the originals followed by the copies, which
/// carry the original's label and metadata with `source` set to `augmented`.
pub fn apply_plan(train: &DatasetManifest, plan: &AugmentPlan, seed: u64, out_dir: &Path) -> Result<DatasetManifest, AugmentError> {
    let jobs = jobs_for(&train.records, |r| r.label, plan, |r| r)?;
    let stems = unique_stems(&train.records);
    let e = train.expected;
    let records = map_jobs(&jobs, |j| {
        let original = resize_bilinear(&load_image(&j.record.image_path)?, e.width, e.height)?;
        let img = j.op.apply(&original, copy_seed(seed, j.label, j.copy.original, j.copy.round))?;
        let path: PathBuf = out_dir
            .join("aug")
            .join(j.label.as_str())
            .join(format!("{}_{}.png", stems[j.index], j.copy.round));
        img.save_png(&path)?;
        let mut rec = j.record.clone();
        rec.image_path = path;
        rec.metadata.insert("source".into(), "augmented".into());
        rec.metadata.insert("transform".into(), j.op.name().into());
        rec.metadata.insert("derived_from".into(), j.record.image_path.to_string_lossy().into_owned().into());
        Ok(rec)
    })?;
    let mut out = train.clone();
    out.records.extend(records);
    Ok(out)
}

/// File stems per record, suffixed with the record index where two originals share a stem.
fn unique_stems(records: &[SampleRecord]) -> Vec<String> {
    let raw: Vec<String> = records
        .iter()
        .map(|r| r.image_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "img".into()))
        .collect();
    let mut seen: HashMap<(&str, Label), usize> = HashMap::new();
    for (s, r) in raw.iter().zip(records) {
        *seen.entry((s.as_str(), r.label)).or_default() += 1;
    }
    raw.iter()
        .zip(records)
        .enumerate()
        .map(|(i, (s, r))| if seen[&(s.as_str(), r.label)] > 1 { format!("{s}~{i}") } else { s.clone() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ExpectedShape;
    use proptest::prelude::*;

    fn img2x2(a: u8, b: u8, c: u8, d: u8) -> PixelImage {
        PixelImage::new(2, 2, 1, vec![a, b, c, d]).unwrap()
    }

    #[test]
    fn rotate_2x2_index_map() {
        // [[a,b],[c,d]] -> [[c,a],[d,b]]
        assert_eq!(rotate90(&img2x2(1, 2, 3, 4)), img2x2(3, 1, 4, 2));
    }

    #[test]
    fn rotate_four_times_is_identity() {
        let img = PixelImage::from_fn(5, 3, 3, |x, y, c| (x * 40 + y * 7 + c) as u8).unwrap();
        let r1 = rotate90(&img);
        assert_eq!((r1.width(), r1.height()), (3, 5));
        assert_eq!(rotate90(&rotate90(&rotate90(&r1))), img);
        let k = PixelImage::filled(4, 4, 3, 77).unwrap();
        assert_eq!(rotate90(&k), k);
    }

    #[test]
    fn noise_zero_amount_and_determinism() {
        let img = PixelImage::filled(20, 20, 3, 128).unwrap();
        assert_eq!(gaussian_noise(&img, 0.0, 0.6, 5).unwrap(), img);
        assert_eq!(gaussian_noise(&img, 0.5, 0.6, 5).unwrap(), gaussian_noise(&img, 0.5, 0.6, 5).unwrap());
        assert_ne!(gaussian_noise(&img, 0.5, 0.6, 5).unwrap(), gaussian_noise(&img, 0.5, 0.6, 6).unwrap());
        assert!(gaussian_noise(&img, 1.5, 0.6, 5).is_err());
    }

    #[test]
    fn noise_changed_fraction_concentrates() {
        // binomial(10000, 0.5) has sd 0.005; 0.03 is six sd. With sigma = 153 a
        // selected pixel stays unchanged only if g rounds to 0, P ~ 0.0026.
        let img = PixelImage::filled(100, 100, 1, 128).unwrap();
        for seed in 0..5 {
            let out = gaussian_noise(&img, 0.5, 0.6, seed).unwrap();
            let changed = out.data().iter().zip(img.data()).filter(|(a, b)| a != b).count();
            let frac = changed as f64 / 10_000.0;
            assert!((frac - 0.5).abs() <= 0.03, "seed {seed}: {frac}");
        }
    }

    #[test]
    fn brightness() {
        let img = PixelImage::new(3, 1, 1, vec![200, 250, 0]).unwrap();
        assert_eq!(adjust_brightness(&img, 1.0).unwrap(), img);
        assert_eq!(adjust_brightness(&img, 0.7).unwrap().data(), &[140, 175, 0]);
        assert_eq!(adjust_brightness(&img, 1.2).unwrap().data()[1], 255);
        assert!(adjust_brightness(&img, 0.0).is_err());
    }

    #[test]
    fn blur_single_white_pixel() {
        let mut img = PixelImage::filled(3, 3, 1, 0).unwrap();
        img.set(1, 1, 0, 255);
        assert_eq!(box_blur(&img, 1).unwrap().get(1, 1, 0), 28);
        let k = PixelImage::filled(5, 4, 3, 93).unwrap();
        assert_eq!(box_blur(&k, 2).unwrap(), k);
        assert!(box_blur(&k, 0).is_err());
    }

    #[test]
    fn blur_large_radius_matches_brute_force() {
        let img = PixelImage::from_fn(4, 4, 1, |x, y, _| ((x * 67 + y * 29) % 256) as u8).unwrap();
        for r in [4usize, 6] {
            let out = box_blur(&img, r).unwrap();
            let ri = r as isize;
            for y in 0..4 {
                for x in 0..4 {
                    let mut s = 0f64;
                    for dy in -ri..=ri {
                        for dx in -ri..=ri {
                            let xx = (x as isize + dx).clamp(0, 3) as usize;
                            let yy = (y as isize + dy).clamp(0, 3) as usize;
                            s += img.get(xx, yy, 0) as f64;
                        }
                    }
                    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
                    assert_eq!(out.get(x, y, 0), (s / n + 0.5).floor() as u8);
                }
            }
        }
    }

    #[test]
    fn crop_cases() {
        let img = PixelImage::from_fn(6, 5, 3, |x, y, c| (x * 30 + y * 11 + c) as u8).unwrap();
        assert_eq!(center_crop(&img, 1.0).unwrap(), img);
        let k = PixelImage::filled(9, 7, 1, 42).unwrap();
        assert_eq!(center_crop(&k, 0.37).unwrap(), k);
        assert!(matches!(center_crop(&img, 0.05), Err(AugmentError::DegenerateCrop(0))));
        assert!(center_crop(&img, 0.0).is_err());
    }

    #[test]
    fn crop_quadrants_is_upscaled_center() {
        // quadrants 10 / 20 / 30 / 40; the central 2x2 holds one pixel of each
        let img = PixelImage::from_fn(4, 4, 1, |x, y, _| match (x < 2, y < 2) {
            (true, true) => 10,
            (false, true) => 20,
            (true, false) => 30,
            (false, false) => 40,
        })
        .unwrap();
        let out = center_crop(&img, 0.5).unwrap();
        let expected = resize_bilinear(&img2x2(10, 20, 30, 40), 4, 4).unwrap();
        assert_eq!(out, expected);
        assert_eq!(out.get(0, 0, 0), 10);
        assert_eq!(out.get(3, 3, 0), 40);
        assert_eq!(out.get(1, 0, 0), 13);
    }

    #[test]
    fn default_plan_on_full_scale_counts() {
        let counts = BTreeMap::from([(Label::Benign, 11262), (Label::Malignant, 4376)]);
        let plan = plan_augmentation(&counts, None).unwrap();
        let out = plan.output_counts();
        assert_eq!(out[&Label::Benign], 33786);
        assert_eq!(out[&Label::Malignant], 17504);
        assert_eq!(plan.total_output(), 51290);
        assert_eq!(plan.transform_cycle, training_cycle());
    }

    #[test]
    fn balanced_targets_are_noop() {
        let counts = BTreeMap::from([(Label::Benign, 100), (Label::Malignant, 100)]);
        let plan = plan_augmentation(&counts, Some(&counts)).unwrap();
        assert!(plan.per_class.values().all(|p| p.multiplicity == 1 && p.generated == 0));
    }

    #[test]
    fn subgroup_target() {
        let p = ClassPlan::to_target(46, 750).unwrap();
        assert_eq!(p.generated, 704);
        assert_eq!(p.multiplicity, 17);
        assert_eq!(p.schedule(4).len(), 704);
        let below = BTreeMap::from([(Label::Malignant, 10)]);
        let counts = BTreeMap::from([(Label::Malignant, 20)]);
        assert!(matches!(
            plan_augmentation(&counts, Some(&below)),
            Err(AugmentError::TargetBelowOriginal { class: Label::Malignant, .. })
        ));
    }

    #[test]
    fn round_robin_counting() {
        let p = ClassPlan::multiply(5, 4);
        let jobs = p.schedule(3);
        assert_eq!(jobs.len(), 15);
        for original in 0..5 {
            let mut ops: Vec<_> = jobs.iter().filter(|j| j.original == original).map(|j| j.op_index).collect();
            ops.sort();
            assert_eq!(ops, vec![0, 1, 2]);
        }
    }

    fn samples() -> Vec<(PixelImage, Label)> {
        (0..6)
            .map(|i| {
                let img = PixelImage::from_fn(6, 6, 3, |x, y, c| ((x * 20 + y * 30 + c * 5 + i * 17) % 256) as u8).unwrap();
                (img, if i % 3 == 0 { Label::Malignant } else { Label::Benign })
            })
            .collect()
    }

    #[test]
    fn in_memory_counts_labels_and_determinism() {
        let s = samples();
        let counts = BTreeMap::from([(Label::Benign, 4), (Label::Malignant, 2)]);
        let plan = plan_augmentation(&counts, None).unwrap();
        let out = augment_samples(&s, &plan, 9).unwrap();
        assert_eq!(out.iter().filter(|(_, l)| *l == Label::Benign).count(), 12);
        assert_eq!(out.iter().filter(|(_, l)| *l == Label::Malignant).count(), 8);
        assert_eq!(&out[..6], &s[..]);
        assert_eq!(out, augment_samples(&s, &plan, 9).unwrap());
        let identity = plan_augmentation(&counts, Some(&counts)).unwrap();
        assert_eq!(augment_samples(&s, &identity, 9).unwrap(), s);
    }

    #[test]
    fn apply_plan_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<_> = samples()
            .into_iter()
            .enumerate()
            .map(|(i, (img, l))| {
                let p = dir.path().join(format!("src/s{i}.png"));
                img.save_png(&p).unwrap();
                SampleRecord::new(p, l).with_meta("skin_tone", "dark")
            })
            .collect();
        let m = DatasetManifest::new(ExpectedShape { width: 6, height: 6, channels: 3 }, records);
        let counts = m.class_counts();
        let plan = plan_augmentation(&counts, None).unwrap();
        let out = apply_plan(&m, &plan, 3, dir.path()).unwrap();
        assert_eq!(out.count(Label::Benign), 12);
        assert_eq!(out.count(Label::Malignant), 8);
        let derived: Vec<_> = out.records.iter().skip(6).collect();
        assert!(derived.iter().all(|r| r.meta_str("source") == Some("augmented") && r.meta_str("skin_tone") == Some("dark")));
        assert!(dir.path().join("aug/benign/s1_1.png").exists());
        assert!(dir.path().join("aug/malignant/s0_3.png").exists());
        let bytes = std::fs::read(dir.path().join("aug/benign/s1_2.png")).unwrap();
        let again = tempfile::tempdir().unwrap();
        apply_plan(&m, &plan, 3, again.path()).unwrap();
        assert_eq!(bytes, std::fs::read(again.path().join("aug/benign/s1_2.png")).unwrap());
        let identity = plan_augmentation(&counts, Some(&counts)).unwrap();
        assert_eq!(apply_plan(&m, &identity, 3, dir.path()).unwrap(), m);
    }

    fn any_op() -> impl Strategy<Value = AugmentOp> {
        prop_oneof![
            Just(AugmentOp::Rotate90),
            (0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(amount, strength)| AugmentOp::GaussianNoise { amount, strength }),
            (0.0f64..0.99).prop_map(|amount| AugmentOp::Darken { amount }),
            (1usize..4).prop_map(|radius| AugmentOp::Blur { radius }),
            (0.1f64..3.0).prop_map(|factor| AugmentOp::Exposure { factor }),
            (0.5f64..=1.0).prop_map(|fraction| AugmentOp::Crop { fraction }),
        ]
    }

    proptest! {
        #[test]
        fn transforms_preserve_shape_on_squares(op in any_op(), side in 2usize..9, seed in any::<u64>()) {
            let img = PixelImage::from_fn(side, side, 3, |x, y, c| ((x * 13 + y * 7 + c) as u64 ^ seed) as u8).unwrap();
            let out = op.apply(&img, seed).unwrap();
            prop_assert!(out.same_dims(&img));
        }
    }
}

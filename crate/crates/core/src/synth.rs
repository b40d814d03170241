//! Synthetic lesion blobs for tests, benchmarks and the demo.
//!
//! Benign lesions are small, round and evenly pigmented. Malignant lesions are
//! larger, have ragged borders and mottled colour, mirroring the size and
//! density contrast between the class mean images.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{normalize, DataError, DatasetManifest, ExpectedShape, Label, NormMode, PixelImage, SampleRecord};
use crate::nn::ExampleSet;
use crate::rng::{derive_seed, seeded};

/// Rendering domain. `B` moves the skin and pigment palette so a model trained
/// on `A` sees familiar shapes under unfamiliar colours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    A,
    B,
}

struct Palette {
    skin: [f64; 3],
    pigment: [f64; 3],
    dark: [f64; 3],
    red: [f64; 3],
}

fn palette(domain: Domain) -> Palette {
    match domain {
        Domain::A => Palette { skin: [214.0, 170.0, 140.0], pigment: [120.0, 75.0, 50.0], dark: [45.0, 30.0, 25.0], red: [150.0, 60.0, 55.0] },
        Domain::B => Palette { skin: [228.0, 182.0, 172.0], pigment: [112.0, 62.0, 84.0], dark: [52.0, 26.0, 46.0], red: [165.0, 52.0, 84.0] },
    }
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Renders one `size`×`size` RGB lesion.
pub fn lesion_image(label: Label, domain: Domain, size: usize, seed: u64) -> PixelImage {
    let mut rng = seeded(seed);
    let pal = palette(domain);
    let s = size as f64;
    let tone: f64 = rng.random_range(-18.0..18.0);
    let skin = pal.skin.map(|v| v + tone);
    let cx = s / 2.0 + rng.random_range(-0.08..0.08) * s;
    let cy = s / 2.0 + rng.random_range(-0.08..0.08) * s;
    // the classes overlap in every cue; only their combination separates them
    let (radius, harmonics, spot_count, spot_strength) = match label {
        Label::Benign => (
            s * rng.random_range(0.12..0.24),
            (0..2).map(|k| ((2 + k) as f64, rng.random_range(0.0..0.08), rng.random_range(0.0..TAU))).collect::<Vec<_>>(),
            rng.random_range(0..=1),
            0.4,
        ),
        Label::Malignant => (
            s * rng.random_range(0.18..0.32),
            (0..3)
                .map(|k| ((3 + 2 * k) as f64, rng.random_range(0.03..0.16), rng.random_range(0.0..TAU)))
                .collect(),
            rng.random_range(1..=4),
            0.9,
        ),
    };
    let spots: Vec<(f64, f64, f64, [f64; 3])> = (0..spot_count)
        .map(|i| {
            let a = rng.random_range(0.0..TAU);
            let d = rng.random_range(0.0..0.6) * radius;
            let colour = if i % 2 == 0 { pal.dark } else { pal.red };
            (cx + d * a.cos(), cy + d * a.sin(), radius * rng.random_range(0.25..0.5), colour)
        })
        .collect();
    let noise = Normal::new(0.0, 10.0).expect("valid sigma");
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let theta = dy.atan2(dx);
            let edge = radius * (1.0 + harmonics.iter().map(|&(k, a, p)| a * (k * theta + p).sin()).sum::<f64>());
            let r = (dx * dx + dy * dy).sqrt();
            // soft one-pixel border
            let inside = (edge - r + 0.5).clamp(0.0, 1.0);
            let mut lesion = pal.pigment;
            for &(sx, sy, sr, colour) in &spots {
                let d = ((x as f64 + 0.5 - sx).powi(2) + (y as f64 + 0.5 - sy).powi(2)).sqrt();
                lesion = mix(lesion, colour, spot_strength * (1.0 - d / sr).clamp(0.0, 1.0));
            }
            let px = mix(skin, lesion, inside);
            for v in px {
                data.push((v + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    PixelImage::new(size, size, 3, data).expect("dimensions are consistent")
}

/// `benign` then `malignant` lesions, each from its own derived seed.
pub fn lesion_set(benign: usize, malignant: usize, domain: Domain, size: usize, seed: u64) -> Vec<(PixelImage, Label)> {
    let mut out = Vec::with_capacity(benign + malignant);
    for (label, n) in [(Label::Benign, benign), (Label::Malignant, malignant)] {
        for i in 0..n {
            out.push((lesion_image(label, domain, size, derive_seed(seed, &[label as u64, i as u64])), label));
        }
    }
    out
}

/// Normalized example set for direct training.
pub fn example_set(samples: &[(PixelImage, Label)], mode: NormMode) -> ExampleSet {
    let first = &samples[0].0;
    let mut set = ExampleSet::new([first.channels(), first.height(), first.width()]);
    for (img, label) in samples {
        set.push(normalize(img, mode).data(), *label).expect("uniform sample shapes");
    }
    set
}

/// Writes PNGs under `dir/images` and returns the manifest (also saved as
/// `dir/manifest.json`). Metadata alternates sex and, for domain `B`, marks a dark skin tone.
pub fn write_dataset(
    dir: &Path,
    benign: usize,
    malignant: usize,
    domain: Domain,
    size: usize,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    let mut records = Vec::with_capacity(benign + malignant);
    for (i, (img, label)) in lesion_set(benign, malignant, domain, size, seed).into_iter().enumerate() {
        let name = format!("{}_{:05}.png", label.as_str(), i);
        img.save_png(&dir.join("images").join(&name))?;
        let tone = if domain == Domain::B { "dark" } else { "light" };
        records.push(
            SampleRecord::new(Path::new("images").join(name), label)
                .with_meta("sex", if i % 2 == 0 { "female" } else { "male" })
                .with_meta("skin_tone", tone)
                .with_meta("source", "archive"),
        );
    }
    let manifest = DatasetManifest::new(ExpectedShape { width: size, height: size, channels: 3 }, records);
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_manifest;

    fn dark_fraction(img: &PixelImage) -> f64 {
        let dark = img.data().chunks_exact(3).filter(|p| (p[0] as u32 + p[1] as u32 + p[2] as u32) < 300).count();
        dark as f64 / (img.width() * img.height()) as f64
    }

    #[test]
    fn malignant_blobs_are_larger() {
        let set = lesion_set(50, 50, Domain::A, 32, 3);
        let mean = |l: Label| {
            let v: Vec<f64> = set.iter().filter(|(_, x)| *x == l).map(|(i, _)| dark_fraction(i)).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        // mean radii 0.25 vs 0.18 of the side give an area ratio near 1.9
        assert!(mean(Label::Malignant) > 1.5 * mean(Label::Benign));
    }

    #[test]
    fn deterministic_and_domain_dependent() {
        assert_eq!(lesion_image(Label::Benign, Domain::A, 16, 9), lesion_image(Label::Benign, Domain::A, 16, 9));
        assert_ne!(lesion_image(Label::Benign, Domain::A, 16, 9), lesion_image(Label::Benign, Domain::B, 16, 9));
    }

    #[test]
    fn written_dataset_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), 3, 2, Domain::A, 16, 1).unwrap();
        let back = load_manifest(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back.len(), 5);
        assert_eq!(back.count(Label::Malignant), 2);
        assert!(back.records[0].image_path.is_absolute() || back.records[0].image_path.starts_with(dir.path()));
        assert_eq!(m.records[0].meta_str("source"), Some("archive"));
    }
}

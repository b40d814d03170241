//! Exploratory statistics over a class of images: mean, population variance,
//! standard deviation, and a colormapped heatmap of where two class means differ.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{round_half_up_u8, DataError, PixelImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    Mean,
    Variance,
    Std,
    Difference,
}

/// Per-pixel statistic with real-valued, unclamped entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub kind: StatKind,
}

#[derive(Debug, thiserror::Error)]
pub enum EdaError {
    #[error("need at least {needed} images, got {got}")]
    TooFewImages { needed: usize, got: usize },
    #[error("image dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error("expected a mean image, got {0:?}")]
    NotAMean(StatKind),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl StatImage {
    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Min-max scales to 8 bits for viewing.
    pub fn to_pixels(&self) -> PixelImage {
        let (lo, hi) = self.min_max();
        let range = hi - lo;
        let data = self
            .data
            .iter()
            .map(|&v| if range > 0.0 { round_half_up_u8((v - lo) / range * 255.0) } else { 0 })
            .collect();
        PixelImage::new(self.width, self.height, self.channels, data).expect("stat image dims are valid")
    }

    /// Writes `<stem>.png` plus a `<stem>.json` sidecar recording the scaling range.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<(), EdaError> {
        std::fs::create_dir_all(dir)?;
        self.to_pixels().save_png(&dir.join(format!("{stem}.png")))?;
        let (min, max) = self.min_max();
        let sidecar = serde_json::json!({
            "kind": self.kind,
            "width": self.width,
            "height": self.height,
            "channels": self.channels,
            "min": min,
            "max": max,
        });
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar).unwrap())?;
        Ok(())
    }
}

fn check_same_dims(images: &[PixelImage]) -> Result<(), EdaError> {
    let first = &images[0];
    if let Some(bad) = images.iter().find(|i| !i.same_dims(first)) {
        return Err(EdaError::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            first.width(),
            first.height(),
            first.channels(),
            bad.width(),
            bad.height(),
            bad.channels()
        )));
    }
    Ok(())
}

fn sums(images: &[PixelImage]) -> (Vec<u64>, Vec<u64>) {
    let len = images[0].data().len();
    let mut s = vec![0u64; len];
    let mut sq = vec![0u64; len];
    for img in images {
        for (i, &v) in img.data().iter().enumerate() {
            s[i] += v as u64;
            sq[i] += v as u64 * v as u64;
        }
    }
    (s, sq)
}

fn stat_like(first: &PixelImage, data: Vec<f64>, kind: StatKind) -> StatImage {
    StatImage { width: first.width(), height: first.height(), channels: first.channels(), data, kind }
}

/// Elementwise arithmetic mean over a class of equally sized images.
pub fn class_mean_image(images: &[PixelImage]) -> Result<StatImage, EdaError> {
    if images.is_empty() {
        return Err(EdaError::TooFewImages { needed: 1, got: 0 });
    }
    check_same_dims(images)?;
    let n = images.len() as f64;
    let (s, _) = sums(images);
    Ok(stat_like(&images[0], s.iter().map(|&v| v as f64 / n).collect(), StatKind::Mean))
}

/// Population variance (divide by n) and its square root, per pixel.
pub fn class_dispersion_image(images: &[PixelImage]) -> Result<(StatImage, StatImage), EdaError> {
    if images.len() < 2 {
        return Err(EdaError::TooFewImages { needed: 2, got: images.len() });
    }
    check_same_dims(images)?;
    let n = images.len() as u128;
    let (s, sq) = sums(images);
    // n*sum(x^2) - (sum x)^2 is exact in integers and never negative
    let var: Vec<f64> = s
        .iter()
        .zip(&sq)
        .map(|(&s, &q)| (n * q as u128 - (s as u128) * (s as u128)) as f64 / (n * n) as f64)
        .collect();
    let std = var.iter().map(|v| v.sqrt()).collect();
    Ok((stat_like(&images[0], var, StatKind::Variance), stat_like(&images[0], std, StatKind::Std)))
}

/// Rainbow colormap control points over [0, 1].
pub const COLORMAP: [(f64, [u8; 3]); 6] = [
    (0.0, [255, 0, 255]),
    (0.2, [0, 0, 255]),
    (0.4, [0, 255, 255]),
    (0.6, [0, 255, 0]),
    (0.8, [255, 255, 0]),
    (1.0, [255, 0, 0]),
];

/// Piecewise-linear colormap lookup; `t` is clamped to [0, 1].
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    for pair in COLORMAP.windows(2) {
        let (t0, c0) = pair[0];
        let (t1, c1) = pair[1];
        if t <= t1 + 1e-12 {
            let f = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            return [0, 1, 2].map(|i| round_half_up_u8(c0[i] as f64 + (c1[i] as f64 - c0[i] as f64) * f));
        }
    }
    COLORMAP[5].1
}

/// Scalar field of per-pixel absolute differences between channel-averaged means.
pub fn difference_field(mean_a: &StatImage, mean_b: &StatImage) -> Result<StatImage, EdaError> {
    for m in [mean_a, mean_b] {
        if m.kind != StatKind::Mean {
            return Err(EdaError::NotAMean(m.kind));
        }
    }
    if (mean_a.width, mean_a.height, mean_a.channels) != (mean_b.width, mean_b.height, mean_b.channels) {
        return Err(EdaError::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            mean_a.width, mean_a.height, mean_a.channels, mean_b.width, mean_b.height, mean_b.channels
        )));
    }
    let ch = mean_a.channels;
    let data = mean_a
        .data
        .chunks_exact(ch)
        .zip(mean_b.data.chunks_exact(ch))
        .map(|(a, b)| {
            let ma: f64 = a.iter().sum::<f64>() / ch as f64;
            let mb: f64 = b.iter().sum::<f64>() / ch as f64;
            (ma - mb).abs()
        })
        .collect();
    Ok(StatImage { width: mean_a.width, height: mean_a.height, channels: 1, data, kind: StatKind::Difference })
}

/// Colormaps a scalar field after min-max scaling. A zero-range field maps to the first stop.
pub fn colorize(field: &StatImage) -> PixelImage {
    let (lo, hi) = field.min_max();
    let range = hi - lo;
    let mut data = Vec::with_capacity(field.data.len() * 3);
    for &v in &field.data {
        let t = if range > 0.0 { (v - lo) / range } else { 0.0 };
        data.extend_from_slice(&colormap(t));
    }
    PixelImage::new(field.width, field.height, 3, data).expect("heatmap dims are valid")
}

/// Colormapped heatmap of where two class means differ.
pub fn difference_heatmap(mean_a: &StatImage, mean_b: &StatImage) -> Result<PixelImage, EdaError> {
    Ok(colorize(&difference_field(mean_a, mean_b)?))
}

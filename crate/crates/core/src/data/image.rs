use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use super::DataError;

/// An 8-bit raster image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl PixelImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::InvalidImage(format!("zero dimension {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(DataError::InvalidImage(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(DataError::InvalidImage(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Image filled with a single value in every channel.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self, DataError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self, DataError> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_dims(&self, other: &PixelImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Replicates a grayscale image to three channels; RGB images are returned as is.
    pub fn to_rgb(&self) -> PixelImage {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        PixelImage { width: self.width, height: self.height, channels: 3, data }
    }

    /// Interleaved RGBA bytes, as expected by canvas `ImageData`.
    pub fn to_rgba(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width * self.height * 4);
        for px in self.data.chunks_exact(self.channels) {
            match px {
                [g] => out.extend_from_slice(&[*g, *g, *g, 255]),
                [r, g, b] => out.extend_from_slice(&[*r, *g, *b, 255]),
                _ => unreachable!(),
            }
        }
        out
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(w, h, self.data.clone()).expect("validated buffer"),
            ),
            _ => DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(w, h, self.data.clone()).expect("validated buffer"),
            ),
        }
    }

    pub fn from_dynamic(img: &DynamicImage) -> PixelImage {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        PixelImage { width: w as usize, height: h as usize, channels: 3, data: rgb.into_raw() }
    }

    /// Decodes a PNG or JPEG from memory into 8-bit RGB.
    pub fn decode(bytes: &[u8]) -> Result<PixelImage, DataError> {
        let img = image::load_from_memory(bytes).map_err(|e| DataError::Decode(e.to_string()))?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, DataError> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_dynamic()
            .write_to(&mut buf, ImageFormat::Png)
            .map_err(|e| DataError::Decode(e.to_string()))?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), DataError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
        }
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
    }
}

/// Native properties of an image file, read before any conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageInfo {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bits_per_channel: usize,
}

pub(crate) fn open_dynamic(path: &Path) -> Result<DynamicImage, DataError> {
    let reader = ImageReader::open(path)
        .map_err(|e| DataError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| DataError::io(path, e))?;
    reader
        .decode()
        .map_err(|e| DataError::Decode(format!("{}: {e}", path.display())))
}

/// Decodes an image file to 8-bit RGB.
pub fn load_image(path: &Path) -> Result<PixelImage, DataError> {
    Ok(PixelImage::from_dynamic(&open_dynamic(path)?))
}

pub fn inspect_image(path: &Path) -> Result<ImageInfo, DataError> {
    let img = open_dynamic(path)?;
    let color = img.color();
    let channels = color.channel_count() as usize;
    Ok(ImageInfo {
        width: img.width() as usize,
        height: img.height() as usize,
        channels,
        bits_per_channel: color.bits_per_pixel() as usize / channels,
    })
}

/// Bilinear resize with corner-aligned sampling and half-up rounding.
pub fn resize_bilinear(image: &PixelImage, target_w: usize, target_h: usize) -> Result<PixelImage, DataError> {
    if target_w == 0 || target_h == 0 {
        return Err(DataError::ZeroDimension);
    }
    if target_w == image.width && target_h == image.height {
        return Ok(image.clone());
    }
    let xs = sample_positions(image.width, target_w);
    let ys = sample_positions(image.height, target_h);
    let ch = image.channels;
    let mut data = Vec::with_capacity(target_w * target_h * ch);
    for &sy in &ys {
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(image.height - 1);
        let fy = sy - y0 as f64;
        for &sx in &xs {
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(image.width - 1);
            let fx = sx - x0 as f64;
            for c in 0..ch {
                let top = image.get(x0, y0, c) as f64 * (1.0 - fx) + image.get(x1, y0, c) as f64 * fx;
                let bot = image.get(x0, y1, c) as f64 * (1.0 - fx) + image.get(x1, y1, c) as f64 * fx;
                let v = top * (1.0 - fy) + bot * fy;
                data.push(round_half_up_u8(v));
            }
        }
    }
    PixelImage::new(target_w, target_h, ch, data)
}

fn sample_positions(src: usize, dst: usize) -> Vec<f64> {
    if dst == 1 {
        return vec![(src - 1) as f64 / 2.0];
    }
    let step = (src - 1) as f64 / (dst - 1) as f64;
    (0..dst).map(|i| (i as f64 * step).min((src - 1) as f64)).collect()
}

#[inline]
pub(crate) fn round_half_up_u8(v: f64) -> u8 {
    // the epsilon absorbs representation error at exact .5 boundaries
    (v + 0.5 + 1e-9).floor().clamp(0.0, 255.0) as u8
}

use serde::{Deserialize, Serialize};

use super::{resize_bilinear, DataError, PixelImage};

/// Dense real-valued tensor, row-major over `shape`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, DataError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DataError::ShapeMismatch { expected, actual: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Stacks equally shaped tensors along a new leading batch axis.
    pub fn stack(items: &[FeatureTensor]) -> Result<FeatureTensor, DataError> {
        let first = items.first().ok_or(DataError::EmptyManifest)?;
        let mut data = Vec::with_capacity(first.data.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(DataError::ShapeMismatch { expected: first.data.len(), actual: t.data.len() });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(FeatureTensor { shape, data })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// v / 255, in [0, 1]
    #[default]
    Unit,
    /// 2 v / 255 - 1, in [-1, 1]
    Symmetric,
}

impl NormMode {
    #[inline]
    pub fn apply(self, v: u8) -> f32 {
        let u = v as f32 / 255.0;
        match self {
            NormMode::Unit => u,
            NormMode::Symmetric => 2.0 * u - 1.0,
        }
    }

    #[inline]
    pub fn invert(self, v: f32) -> u8 {
        let u = match self {
            NormMode::Unit => v,
            NormMode::Symmetric => (v + 1.0) / 2.0,
        };
        (u * 255.0).round().clamp(0.0, 255.0) as u8
    }
}

/// Converts an interleaved image into a channel-major `[channels, height, width]` tensor.
pub fn normalize(image: &PixelImage, mode: NormMode) -> FeatureTensor {
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let src = image.data();
    let mut data = vec![0.0f32; w * h * ch];
    for c in 0..ch {
        let plane = &mut data[c * w * h..(c + 1) * w * h];
        for (i, out) in plane.iter_mut().enumerate() {
            *out = mode.apply(src[i * ch + c]);
        }
    }
    FeatureTensor { shape: vec![ch, h, w], data }
}

/// Inverse of [`normalize`].
pub fn denormalize(tensor: &FeatureTensor, mode: NormMode) -> Result<PixelImage, DataError> {
    let [ch, h, w] = tensor.shape[..] else {
        return Err(DataError::ShapeMismatch { expected: 3, actual: tensor.shape.len() });
    };
    PixelImage::from_fn(w, h, ch, |x, y, c| mode.invert(tensor.data[(c * h + y) * w + x]))
}

/// Resizes to the network's spatial input and normalizes. A grayscale image
/// is replicated to three channels when the network expects three.
pub fn prepare_input(image: &PixelImage, input_shape: [usize; 3], mode: NormMode) -> Result<FeatureTensor, DataError> {
    let [ch, h, w] = input_shape;
    let resized = resize_bilinear(image, w, h)?;
    let adjusted = match (resized.channels(), ch) {
        (a, b) if a == b => resized,
        (1, 3) => resized.to_rgb(),
        (3, 1) => {
            let data = resized
                .data()
                .chunks_exact(3)
                .map(|p| ((p[0] as u32 + p[1] as u32 + p[2] as u32 + 1) / 3) as u8)
                .collect();
            PixelImage::new(resized.width(), resized.height(), 1, data)?
        }
        (a, b) => return Err(DataError::ShapeMismatch { expected: b, actual: a }),
    };
    Ok(normalize(&adjusted, mode))
}

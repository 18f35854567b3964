//! Domain value types shared by every stage of the pipeline.
//!
//! All pixel tensors are stored row-major; colour tensors are laid out
//! height × width × channels (channel fastest).

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An H×W×C float tensor with no range restriction.
///
/// Masked and noise-perturbed inputs live here, since adding Gaussian noise
/// pushes values outside `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidDimension(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::mismatch(
                format!("{expected} values"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
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

    /// The channel values of the pixel at row-major index `pixel`.
    pub fn pixel(&self, pixel: usize) -> &[f32] {
        let start = pixel * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, pixel: usize) -> &mut [f32] {
        let start = pixel * self.channels;
        &mut self.data[start..start + self.channels]
    }
}

/// An input image with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(ImageTensor);

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::try_from(ImageTensor::new(height, width, channels, data)?)
    }

    pub fn as_tensor(&self) -> &ImageTensor {
        &self.0
    }

    pub fn into_tensor(self) -> ImageTensor {
        self.0
    }
}

impl TryFrom<ImageTensor> for Image {
    type Error = Error;

    fn try_from(tensor: ImageTensor) -> Result<Self> {
        if let Some(v) = tensor.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "image values must lie in [0, 1], found {v}"
            )));
        }
        Ok(Self(tensor))
    }
}

impl Deref for Image {
    type Target = ImageTensor;

    fn deref(&self) -> &ImageTensor {
        &self.0
    }
}

/// Patch embeddings of one transformer block: `num_patches` rows of `dim`
/// values, patch tokens only.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBlock {
    num_patches: usize,
    dim: usize,
    values: Vec<f32>,
    block_index: usize,
}

impl EmbeddingBlock {
    pub fn new(num_patches: usize, dim: usize, values: Vec<f32>, block_index: usize) -> Result<Self> {
        if num_patches == 0 || dim == 0 {
            return Err(Error::InvalidDimension(format!(
                "embedding block must be non-empty, got {num_patches}x{dim}"
            )));
        }
        if values.len() != num_patches * dim {
            return Err(Error::mismatch(
                format!("{num_patches}x{dim} = {} values", num_patches * dim),
                format!("{} values", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embedding values must be finite".into()));
        }
        Ok(Self {
            num_patches,
            dim,
            values,
            block_index,
        })
    }

    /// Assemble a block from per-dimension g×g slices (the inverse of
    /// [`EmbeddingBlock::frontal_slice`]).
    pub fn from_frontal_slices(slices: &[Vec<f32>], block_index: usize) -> Result<Self> {
        let dim = slices.len();
        let num_patches = slices.first().map_or(0, Vec::len);
        if slices.iter().any(|s| s.len() != num_patches) {
            return Err(Error::InvalidArgument("frontal slices differ in length".into()));
        }
        let mut values = vec![0.0; num_patches * dim];
        for (d, slice) in slices.iter().enumerate() {
            for (p, v) in slice.iter().enumerate() {
                values[p * dim + d] = *v;
            }
        }
        Self::new(num_patches, dim, values, block_index)
    }

    pub fn num_patches(&self) -> usize {
        self.num_patches
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_index(&self) -> usize {
        self.block_index
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Embedding vector of patch `p`.
    pub fn row(&self, p: usize) -> &[f32] {
        &self.values[p * self.dim..(p + 1) * self.dim]
    }

    /// Side of the square patch grid, or an error when `num_patches` is not
    /// a perfect square.
    pub fn grid_side(&self) -> Result<usize> {
        let side = isqrt(self.num_patches);
        if side * side != self.num_patches {
            return Err(Error::InvalidGeometry(format!(
                "{} patch tokens do not form a square grid",
                self.num_patches
            )));
        }
        Ok(side)
    }

    /// The g×g map of embedding dimension `d`, row-major over patch positions.
    pub fn frontal_slice(&self, d: usize) -> Vec<f32> {
        (0..self.num_patches).map(|p| self.values[p * self.dim + d]).collect()
    }
}

fn isqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// An H×W map in `[0, 1]` multiplied into an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl Mask {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimension(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::mismatch(
                format!("{} values", height * width),
                format!("{} values", values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "mask values must lie in [0, 1], found {v}"
            )));
        }
        Ok(Self { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaliencyKind {
    Raw,
    Corrected,
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    kind: SaliencyKind,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>, kind: SaliencyKind) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimension(format!(
                "saliency dimensions must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::mismatch(
                format!("{} values", height * width),
                format!("{} values", values.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            values,
            kind,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn kind(&self) -> SaliencyKind {
        self.kind
    }
}

/// Per-class scores for one image together with the class being explained.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f32>,
    pub target_class: usize,
}

impl ScoreVector {
    /// Highest-scoring class; ties go to the lowest index.
    pub fn top1(scores: &[f32]) -> Option<usize> {
        scores
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f32)>, (i, &v)| match best {
                Some((_, b)) if v <= b => best,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i)
    }

    pub fn target_score(&self) -> f32 {
        self.scores[self.target_class]
    }

    /// Whether the scores look like a softmax output (sum 1 ± 1e-5, each in
    /// `[0, 1]`).
    pub fn is_probability(&self) -> bool {
        let sum: f64 = self.scores.iter().map(|&v| f64::from(v)).sum();
        (sum - 1.0).abs() <= 1e-5 && self.scores.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range_values() {
        assert!(Image::new(1, 2, 1, vec![0.0, 1.5]).is_err());
        assert!(Image::new(1, 2, 1, vec![0.0, 1.0]).is_ok());
        assert!(ImageTensor::new(1, 2, 1, vec![-3.0, 1.5]).is_ok());
    }

    #[test]
    fn image_rejects_bad_length_and_zero_dims() {
        assert!(matches!(
            ImageTensor::new(2, 2, 3, vec![0.0; 11]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            ImageTensor::new(0, 2, 3, vec![]),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn grid_side_requires_perfect_square() {
        let ok = EmbeddingBlock::new(196, 1, vec![0.0; 196], 11).unwrap();
        assert_eq!(ok.grid_side().unwrap(), 14);
        let bad = EmbeddingBlock::new(197, 1, vec![0.0; 197], 11).unwrap();
        assert!(matches!(bad.grid_side(), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn embedding_rejects_non_finite() {
        assert!(EmbeddingBlock::new(1, 2, vec![0.0, f32::NAN], 0).is_err());
    }

    #[test]
    fn slices_round_trip() {
        let values: Vec<f32> = (0..4 * 3).map(|v| v as f32).collect();
        let block = EmbeddingBlock::new(4, 3, values, 2).unwrap();
        let slices: Vec<_> = (0..3).map(|d| block.frontal_slice(d)).collect();
        assert_eq!(slices[1], vec![1.0, 4.0, 7.0, 10.0]);
        assert_eq!(EmbeddingBlock::from_frontal_slices(&slices, 2).unwrap(), block);
    }

    #[test]
    fn mask_range_is_enforced() {
        assert!(Mask::new(1, 2, vec![0.5, 1.01]).is_err());
        assert!(Mask::filled(3, 3, 1.0).is_ok());
    }

    #[test]
    fn top1_breaks_ties_low() {
        assert_eq!(ScoreVector::top1(&[0.2, 0.4, 0.4]), Some(1));
        assert_eq!(ScoreVector::top1(&[]), None);
    }
}

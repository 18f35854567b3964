//! Mock oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vitcx::mask_gen::Provenance;
use vitcx::oracle::{BlockInfo, OracleInfo, ScoreSemantics};
use vitcx::{EmbeddingBlock, Image, ImageTensor, Mask, MaskSet, ModelOracle, Result};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A deterministic textured image of the given size.
pub fn textured_image(h: usize, w: usize) -> Image {
    let data = (0..h * w * 3)
        .map(|i| ((i * 37 + i / 5) % 101) as f32 / 100.0)
        .collect();
    Image::new(h, w, 3, data).unwrap()
}

pub fn random_masks(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize, p_zero: f64) -> MaskSet {
    let masks = (0..k)
        .map(|_| {
            let v = (0..h * w)
                .map(|_| {
                    if rng.random::<f64>() < p_zero {
                        0.0
                    } else {
                        rng.random::<f32>()
                    }
                })
                .collect();
            Mask::new(h, w, v).unwrap()
        })
        .collect();
    MaskSet::new(masks, Provenance::Vit, None).unwrap()
}

pub fn info(h: usize, w: usize, num_classes: usize) -> OracleInfo {
    OracleInfo {
        input_height: h,
        input_width: w,
        channels: 3,
        num_classes,
        available_blocks: vec![BlockInfo {
            block_index: 0,
            grid_side: 2,
            dim: 3,
        }],
        score_semantics: ScoreSemantics::Softmax,
    }
}

/// Embeddings whose three frontal slices are distinct gradients, so the
/// derived masks are non-trivial for any image.
pub fn fixed_embeddings() -> EmbeddingBlock {
    EmbeddingBlock::new(
        4,
        3,
        vec![0.0, 1.0, 3.0, 1.0, 0.0, 2.0, 2.0, 1.0, 1.0, 3.0, 0.0, 0.0],
        0,
    )
    .unwrap()
}

/// Scores every image with a closure; class 0 gets the closure value.
pub struct FnOracle<F> {
    pub h: usize,
    pub w: usize,
    pub f: F,
}

impl<F: Fn(&ImageTensor) -> f32> ModelOracle for FnOracle<F> {
    fn info(&self) -> Result<OracleInfo> {
        Ok(info(self.h, self.w, 2))
    }

    fn embeddings(&self, _image: &Image, _block: usize) -> Result<EmbeddingBlock> {
        Ok(fixed_embeddings())
    }

    fn score_batch(&self, images: &[ImageTensor], target: usize) -> Result<Vec<f32>> {
        Ok(images
            .iter()
            .map(|img| {
                if target == 0 {
                    (self.f)(img)
                } else {
                    1.0 - (self.f)(img)
                }
            })
            .collect())
    }

    fn class_scores(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        let s = (self.f)(image);
        Ok(vec![s, 1.0 - s])
    }
}

/// Wraps an oracle and counts score queries (images scored) and calls.
pub struct Counting<O> {
    pub inner: O,
    pub images: AtomicUsize,
    pub calls: AtomicUsize,
}

impl<O> Counting<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            images: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn images(&self) -> usize {
        self.images.load(Ordering::SeqCst)
    }
}

impl<O: ModelOracle> ModelOracle for Counting<O> {
    fn info(&self) -> Result<OracleInfo> {
        self.inner.info()
    }

    fn embeddings(&self, image: &Image, block: usize) -> Result<EmbeddingBlock> {
        self.inner.embeddings(image, block)
    }

    fn score_batch(&self, images: &[ImageTensor], target: usize) -> Result<Vec<f32>> {
        self.images.fetch_add(images.len(), Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score_batch(images, target)
    }

    fn class_scores(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        self.inner.class_scores(image)
    }
}

/// Mean intensity of an image, a smooth stand-in for a class score.
pub fn mean_intensity(img: &ImageTensor) -> f32 {
    let d = img.data();
    (d.iter().map(|&v| f64::from(v)).sum::<f64>() / d.len() as f64) as f32
}

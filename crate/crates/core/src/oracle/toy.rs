//! A small seeded pre-norm vision transformer used as an in-process oracle.
//!
//! No class token: patch tokens are mean-pooled before the classification
//! head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BlockInfo, ModelOracle, OracleInfo, ScoreSemantics};
use crate::error::{Error, Result};
use crate::types::{EmbeddingBlock, Image, ImageTensor};

const WEIGHT_STD: f32 = 0.02;
const LN_EPS: f32 = 1e-6;
const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyVitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub num_classes: usize,
    pub weight_seed: u64,
    pub score_semantics: ScoreSemantics,
}

impl Default for ToyVitConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            dim: 16,
            num_blocks: 2,
            num_heads: 2,
            num_classes: 10,
            weight_seed: 7,
            score_semantics: ScoreSemantics::Softmax,
        }
    }
}

impl ToyVitConfig {
    fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::InvalidGeometry(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.num_heads == 0 || !self.dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidGeometry(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.num_heads
            )));
        }
        if self.num_blocks == 0 || self.num_classes == 0 {
            return Err(Error::InvalidArgument(
                "toy ViT needs at least one block and one class".into(),
            ));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * CHANNELS
    }
}

/// Row-major `rows × cols` weight matrix.
#[derive(Debug, Clone)]
struct Linear {
    rows: usize,
    cols: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Linear {
    fn init(rows: usize, cols: usize, rng: &mut ChaCha8Rng, normal: &Normal<f32>) -> Self {
        Self {
            rows,
            cols,
            weight: (0..rows * cols).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; cols],
        }
    }

    /// `x (n × rows) · W + b`.
    fn apply(&self, x: &[f32], n: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(n * self.cols);
        for r in 0..n {
            let row = &x[r * self.rows..(r + 1) * self.rows];
            for c in 0..self.cols {
                let mut acc = f64::from(self.bias[c]);
                for (k, &v) in row.iter().enumerate() {
                    acc += f64::from(v) * f64::from(self.weight[k * self.cols + c]);
                }
                out.push(acc as f32);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    fc1: Linear,
    fc2: Linear,
}

/// Intermediate results of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyForward {
    /// Per block: N×D patch embeddings after the attention residual.
    pub block_embeddings: Vec<Vec<f32>>,
    /// Per block, per head: N×N attention weights.
    pub attention: Vec<Vec<Vec<f32>>>,
    pub logits: Vec<f32>,
    /// Softmax of the logits.
    pub probabilities: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ToyVit {
    cfg: ToyVitConfig,
    embed: Linear,
    pos: Vec<f32>,
    blocks: Vec<Block>,
    head: Linear,
}

impl ToyVit {
    pub fn new(cfg: ToyVitConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.weight_seed);
        let normal = Normal::new(0.0f32, WEIGHT_STD).expect("valid std");
        let d = cfg.dim;
        let embed = Linear::init(cfg.patch_len(), d, &mut rng, &normal);
        let pos = (0..cfg.num_patches() * d).map(|_| normal.sample(&mut rng)).collect();
        let blocks = (0..cfg.num_blocks)
            .map(|_| Block {
                q: Linear::init(d, d, &mut rng, &normal),
                k: Linear::init(d, d, &mut rng, &normal),
                v: Linear::init(d, d, &mut rng, &normal),
                proj: Linear::init(d, d, &mut rng, &normal),
                fc1: Linear::init(d, 4 * d, &mut rng, &normal),
                fc2: Linear::init(4 * d, d, &mut rng, &normal),
            })
            .collect();
        let head = Linear::init(d, cfg.num_classes, &mut rng, &normal);
        Ok(Self {
            cfg,
            embed,
            pos,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ToyVitConfig {
        &self.cfg
    }

    /// Drop the learned position embeddings, making the network equivariant
    /// to patch permutations.
    pub fn zero_position_embeddings(&mut self) {
        self.pos.iter_mut().for_each(|v| *v = 0.0);
    }

    fn patchify(&self, image: &ImageTensor) -> Vec<f32> {
        let (p, g, w) = (self.cfg.patch_size, self.cfg.grid_side(), self.cfg.image_size);
        let mut out = Vec::with_capacity(self.cfg.num_patches() * self.cfg.patch_len());
        for gy in 0..g {
            for gx in 0..g {
                for y in 0..p {
                    for x in 0..p {
                        out.extend_from_slice(image.pixel((gy * p + y) * w + gx * p + x));
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, image: &ImageTensor) -> Result<ToyForward> {
        let s = self.cfg.image_size;
        if image.shape() != (s, s, CHANNELS) {
            return Err(Error::mismatch(
                format!("{s}x{s}x{CHANNELS} input"),
                format!("{:?}", image.shape()),
            ));
        }
        let n = self.cfg.num_patches();
        let d = self.cfg.dim;
        let mut x = self.embed.apply(&self.patchify(image), n);
        for (a, p) in x.iter_mut().zip(&self.pos) {
            *a += p;
        }

        let mut block_embeddings = Vec::with_capacity(self.blocks.len());
        let mut attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let h = layer_norm(&x, d);
            let (attn_out, weights) = self.attend(block, &h, n);
            for (a, b) in x.iter_mut().zip(block.proj.apply(&attn_out, n)) {
                *a += b;
            }
            block_embeddings.push(x.clone());
            attention.push(weights);

            let h = layer_norm(&x, d);
            let hidden: Vec<f32> = block.fc1.apply(&h, n).into_iter().map(gelu).collect();
            for (a, b) in x.iter_mut().zip(block.fc2.apply(&hidden, n)) {
                *a += b;
            }
        }

        let pooled: Vec<f32> = (0..d)
            .map(|c| ((0..n).map(|r| f64::from(x[r * d + c])).sum::<f64>() / n as f64) as f32)
            .collect();
        let logits = self.head.apply(&pooled, 1);
        let probabilities = softmax(&logits);
        Ok(ToyForward {
            block_embeddings,
            attention,
            logits,
            probabilities,
        })
    }

    fn attend(&self, block: &Block, h: &[f32], n: usize) -> (Vec<f32>, Vec<Vec<f32>>) {
        let d = self.cfg.dim;
        let heads = self.cfg.num_heads;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (q, k, v) = (block.q.apply(h, n), block.k.apply(h, n), block.v.apply(h, n));
        let mut out = vec![0.0f32; n * d];
        let mut all_weights = Vec::with_capacity(heads);
        for head in 0..heads {
            let off = head * hd;
            let mut weights = Vec::with_capacity(n * n);
            for i in 0..n {
                let logits: Vec<f32> = (0..n)
                    .map(|j| {
                        let dotp: f64 = (0..hd)
                            .map(|c| f64::from(q[i * d + off + c]) * f64::from(k[j * d + off + c]))
                            .sum();
                        (dotp * scale) as f32
                    })
                    .collect();
                let row = softmax(&logits);
                for c in 0..hd {
                    let acc: f64 = (0..n).map(|j| f64::from(row[j]) * f64::from(v[j * d + off + c])).sum();
                    out[i * d + off + c] = acc as f32;
                }
                weights.extend(row);
            }
            all_weights.push(weights);
        }
        (out, all_weights)
    }

    fn scores_for(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        let fwd = self.forward(image)?;
        Ok(match self.cfg.score_semantics {
            ScoreSemantics::Softmax => fwd.probabilities,
            ScoreSemantics::Logit => fwd.logits,
        })
    }
}

fn layer_norm(x: &[f32], d: usize) -> Vec<f32> {
    x.chunks_exact(d)
        .flat_map(|row| {
            let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + f64::from(LN_EPS)).sqrt();
            row.iter().map(move |&v| ((f64::from(v) - mean) * inv) as f32)
        })
        .collect()
}

fn gelu(x: f32) -> f32 {
    let x = f64::from(x);
    let c = (2.0 / std::f64::consts::PI).sqrt();
    (0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())) as f32
}

fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&v| f64::from(v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| (e / sum) as f32).collect()
}

impl ModelOracle for ToyVit {
    fn info(&self) -> Result<OracleInfo> {
        Ok(OracleInfo {
            input_height: self.cfg.image_size,
            input_width: self.cfg.image_size,
            channels: CHANNELS,
            num_classes: self.cfg.num_classes,
            available_blocks: (0..self.cfg.num_blocks)
                .map(|block_index| BlockInfo {
                    block_index,
                    grid_side: self.cfg.grid_side(),
                    dim: self.cfg.dim,
                })
                .collect(),
            score_semantics: self.cfg.score_semantics,
        })
    }

    fn embeddings(&self, image: &Image, block_index: usize) -> Result<EmbeddingBlock> {
        if block_index >= self.cfg.num_blocks {
            return Err(Error::Oracle(format!(
                "unknown block {block_index}; toy ViT has {} blocks",
                self.cfg.num_blocks
            )));
        }
        let mut fwd = self.forward(image.as_tensor())?;
        let values = fwd.block_embeddings.swap_remove(block_index);
        EmbeddingBlock::new(self.cfg.num_patches(), self.cfg.dim, values, block_index)
    }

    fn score_batch(&self, images: &[ImageTensor], target: usize) -> Result<Vec<f32>> {
        if target >= self.cfg.num_classes {
            return Err(Error::Oracle(format!("class {target} out of range")));
        }
        images
            .par_iter()
            .map(|img| self.scores_for(img).map(|s| s[target]))
            .collect()
    }

    fn class_scores(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        self.scores_for(image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(size: usize) -> Image {
        let data = (0..size * size * CHANNELS)
            .map(|i| ((i * 37) % 101) as f32 / 100.0)
            .collect();
        Image::new(size, size, CHANNELS, data).unwrap()
    }

    #[test]
    fn default_info() {
        let vit = ToyVit::new(ToyVitConfig::default()).unwrap();
        let info = vit.info().unwrap();
        assert_eq!((info.input_height, info.input_width, info.channels), (32, 32, 3));
        assert_eq!(info.num_classes, 10);
        assert_eq!(info.available_blocks.len(), 2);
        assert_eq!(
            info.available_blocks[1],
            BlockInfo {
                block_index: 1,
                grid_side: 4,
                dim: 16
            }
        );
        assert_eq!(vit.info().unwrap(), info);
    }

    #[test]
    fn softmax_and_attention_rows_are_normalized() {
        let vit = ToyVit::new(ToyVitConfig::default()).unwrap();
        let fwd = vit.forward(gradient_image(32).as_tensor()).unwrap();
        let total: f64 = fwd.probabilities.iter().map(|&p| f64::from(p)).sum();
        assert!((total - 1.0).abs() < 1e-5);
        for head in fwd.attention.iter().flatten() {
            for row in head.chunks_exact(16) {
                let s: f64 = row.iter().map(|&p| f64::from(p)).sum();
                assert!((s - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn embeddings_are_deterministic_and_shaped() {
        let vit = ToyVit::new(ToyVitConfig::default()).unwrap();
        let img = gradient_image(32);
        let a = vit.embeddings(&img, 1).unwrap();
        let b = ToyVit::new(ToyVitConfig::default())
            .unwrap()
            .embeddings(&img, 1)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_patches(), (32 / 8) * (32 / 8));
        assert_eq!(a.dim(), 16);
        assert!(vit.embeddings(&img, 2).is_err());
    }

    #[test]
    fn zero_and_textured_images_embed_differently() {
        let vit = ToyVit::new(ToyVitConfig::default()).unwrap();
        let zero = Image::new(32, 32, 3, vec![0.0; 32 * 32 * 3]).unwrap();
        let a = vit.embeddings(&zero, 0).unwrap();
        let b = vit.embeddings(&gradient_image(32), 0).unwrap();
        assert_ne!(a.values(), b.values());
    }

    #[test]
    fn patch_permutation_equivariance_without_positions() {
        let mut vit = ToyVit::new(ToyVitConfig::default()).unwrap();
        vit.zero_position_embeddings();
        let img = gradient_image(32);
        // swap patch (0,0) with patch (2,3)
        let mut swapped = img.as_tensor().clone();
        for y in 0..8 {
            for x in 0..8 {
                let a = y * 32 + x;
                let b = (16 + y) * 32 + 24 + x;
                let pa = img.pixel(a).to_vec();
                let pb = img.pixel(b).to_vec();
                swapped.pixel_mut(a).copy_from_slice(&pb);
                swapped.pixel_mut(b).copy_from_slice(&pa);
            }
        }
        let swapped = Image::try_from(swapped).unwrap();
        let e0 = vit.embeddings(&img, 1).unwrap();
        let e1 = vit.embeddings(&swapped, 1).unwrap();
        let (pa, pb) = (0, 2 * 4 + 3);
        for p in 0..16 {
            let q = if p == pa {
                pb
            } else if p == pb {
                pa
            } else {
                p
            };
            for (x, y) in e0.row(p).iter().zip(e1.row(q)) {
                assert!((x - y).abs() < 1e-5, "patch {p}");
            }
        }

        // With learned positions the swap is not a pure permutation.
        let vit = ToyVit::new(ToyVitConfig::default()).unwrap();
        let e0 = vit.embeddings(&img, 1).unwrap();
        let e1 = vit.embeddings(&swapped, 1).unwrap();
        let diff: f32 = e0.row(pa).iter().zip(e1.row(pb)).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-4);
    }

    #[test]
    fn rejects_bad_geometry() {
        let cfg = ToyVitConfig {
            image_size: 30,
            ..Default::default()
        };
        assert!(matches!(ToyVit::new(cfg), Err(Error::InvalidGeometry(_))));
        let vit = ToyVit::new(ToyVitConfig::default()).unwrap();
        let small = ImageTensor::zeros(16, 16, 3).unwrap();
        assert!(vit.score_batch(&[small], 0).is_err());
        assert!(vit.score_batch(&[], 0).unwrap().is_empty());
    }

    #[test]
    fn logit_mode_reports_logits() {
        let cfg = ToyVitConfig {
            score_semantics: ScoreSemantics::Logit,
            ..Default::default()
        };
        let vit = ToyVit::new(cfg).unwrap();
        let img = gradient_image(32);
        let fwd = vit.forward(img.as_tensor()).unwrap();
        assert_eq!(vit.class_scores(img.as_tensor()).unwrap(), fwd.logits);
    }
}

//! Causal impact of each mask on the target-class score, with the soft
//! Gaussian-noise debiasing that cancels artifacts created by the masked-out
//! pixels.

use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_gen::MaskSet;
use crate::oracle::ModelOracle;
use crate::types::{ImageTensor, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Standard deviation of the Gaussian noise, in `[0, 1]` pixel units.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    #[default]
    Debiased,
    Raw,
}

/// One draw of the noise tensor `Z`, shared by every mask of an
/// explanation run.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    z: ImageTensor,
}

impl NoiseField {
    pub fn sample(height: usize, width: usize, channels: usize, cfg: &NoiseConfig) -> Result<Self> {
        if !cfg.sigma.is_finite() || cfg.sigma < 0.0 {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", cfg.sigma)));
        }
        let n = height * width * channels;
        let data = if cfg.sigma == 0.0 {
            vec![0.0; n]
        } else {
            let normal = Normal::new(0.0, cfg.sigma).expect("sigma checked");
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
        };
        Ok(Self {
            z: ImageTensor::new(height, width, channels, data)?,
        })
    }

    pub fn z(&self) -> &ImageTensor {
        &self.z
    }

    /// `ε = (1 − M) · Z`, with the mask broadcast across channels.
    pub fn for_mask(&self, mask: &Mask) -> Result<ImageTensor> {
        check_dims(&self.z, mask)?;
        let c = self.z.channels();
        let data = self
            .z
            .data()
            .iter()
            .enumerate()
            .map(|(i, &z)| (1.0 - mask.values()[i / c]) * z)
            .collect();
        ImageTensor::new(self.z.height(), self.z.width(), c, data)
    }

    /// `X ⊙ M + (1 − M) · Z`.
    pub fn perturb_masked(&self, image: &ImageTensor, mask: &Mask) -> Result<ImageTensor> {
        check_dims(image, mask)?;
        self.check_image(image)?;
        let c = image.channels();
        let data = image
            .data()
            .iter()
            .zip(self.z.data())
            .enumerate()
            .map(|(i, (&x, &z))| {
                let m = mask.values()[i / c];
                x * m + (1.0 - m) * z
            })
            .collect();
        ImageTensor::new(image.height(), image.width(), c, data)
    }

    /// `X + (1 − M) · Z`.
    pub fn perturb_full(&self, image: &ImageTensor, mask: &Mask) -> Result<ImageTensor> {
        check_dims(image, mask)?;
        self.check_image(image)?;
        let c = image.channels();
        let data = image
            .data()
            .iter()
            .zip(self.z.data())
            .enumerate()
            .map(|(i, (&x, &z))| x + (1.0 - mask.values()[i / c]) * z)
            .collect();
        ImageTensor::new(image.height(), image.width(), c, data)
    }

    fn check_image(&self, image: &ImageTensor) -> Result<()> {
        if image.shape() != self.z.shape() {
            return Err(Error::mismatch(
                format!("{:?}", self.z.shape()),
                format!("{:?}", image.shape()),
            ));
        }
        Ok(())
    }
}

fn check_dims(image: &ImageTensor, mask: &Mask) -> Result<()> {
    if (image.height(), image.width()) != mask.dims() {
        return Err(Error::mismatch(
            format!("{}x{} mask", image.height(), image.width()),
            format!("{}x{}", mask.height(), mask.width()),
        ));
    }
    Ok(())
}

/// Noise for a single mask; the same seed always yields the same `Z`, so
/// repeated calls across masks share it.
pub fn make_noise(mask: &Mask, channels: usize, cfg: &NoiseConfig) -> Result<ImageTensor> {
    NoiseField::sample(mask.height(), mask.width(), channels, cfg)?.for_mask(mask)
}

/// `X ⊙ M`, mask broadcast across channels.
pub fn apply_mask(image: &ImageTensor, mask: &Mask) -> Result<ImageTensor> {
    check_dims(image, mask)?;
    let c = image.channels();
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| x * mask.values()[i / c])
        .collect();
    ImageTensor::new(image.height(), image.width(), c, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactScore {
    pub mask_index: usize,
    /// `f(y | X ⊙ M_i)`, only measured in raw mode.
    pub raw: Option<f64>,
    /// `f(y | X ⊙ M_i + ε_i)`
    pub noisy_masked: f64,
    /// `f(y | X + ε_i)`
    pub noisy_full: f64,
    /// `f(y | X)`
    pub clean_full: f64,
    pub debiased: f64,
}

/// `s = f(y|X⊙M+ε) + [f(y|X) − f(y|X+ε)]`. Not clamped.
pub fn debiased_score(noisy_masked: f64, clean_full: f64, noisy_full: f64) -> f64 {
    noisy_masked + (clean_full - noisy_full)
}

fn with_mask_context(start: usize) -> impl Fn(Error) -> Error {
    move |e| Error::MaskScoring {
        index: start,
        source: Box::new(e),
    }
}

/// Debiased causal impact score of every mask.
///
/// Issues one query for `f(y|X)` and, per mask, one each for the noisy
/// masked image and the noisy full image; `batch_size` masks are sent per
/// oracle call. With `sigma = 0` every score reduces exactly to
/// `f(y | X ⊙ M_i)`.
pub fn debiased_impact<O: ModelOracle + ?Sized>(
    image: &ImageTensor,
    target: usize,
    masks: &MaskSet,
    oracle: &O,
    cfg: &NoiseConfig,
    batch_size: usize,
) -> Result<Vec<ImpactScore>> {
    let clean_full = f64::from(
        *oracle
            .score_batch(std::slice::from_ref(image), target)?
            .first()
            .ok_or_else(|| Error::Protocol("oracle returned no score".into()))?,
    );
    let noise = NoiseField::sample(image.height(), image.width(), image.channels(), cfg)?;

    let mut out = Vec::with_capacity(masks.len());
    for (chunk_index, chunk) in masks.masks().chunks(batch_size.max(1)).enumerate() {
        let start = chunk_index * batch_size.max(1);
        let mut batch = Vec::with_capacity(2 * chunk.len());
        for mask in chunk {
            batch.push(noise.perturb_masked(image, mask)?);
        }
        for mask in chunk {
            batch.push(noise.perturb_full(image, mask)?);
        }
        let scores = oracle.score_batch(&batch, target).map_err(with_mask_context(start))?;
        if scores.len() != batch.len() {
            return Err(with_mask_context(start)(Error::Protocol(format!(
                "expected {} scores, received {}",
                batch.len(),
                scores.len()
            ))));
        }
        let (masked, full) = scores.split_at(chunk.len());
        for (k, (&m, &f)) in masked.iter().zip(full).enumerate() {
            let (noisy_masked, noisy_full) = (f64::from(m), f64::from(f));
            out.push(ImpactScore {
                mask_index: start + k,
                raw: None,
                noisy_masked,
                noisy_full,
                clean_full,
                debiased: debiased_score(noisy_masked, clean_full, noisy_full),
            });
        }
    }
    Ok(out)
}

/// Plain masked-image scores `f(y | X ⊙ M_i)`, one oracle query per mask.
pub fn raw_impact<O: ModelOracle + ?Sized>(
    image: &ImageTensor,
    target: usize,
    masks: &MaskSet,
    oracle: &O,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(masks.len());
    for (chunk_index, chunk) in masks.masks().chunks(batch_size.max(1)).enumerate() {
        let start = chunk_index * batch_size.max(1);
        let batch = chunk.iter().map(|m| apply_mask(image, m)).collect::<Result<Vec<_>>>()?;
        let scores = oracle.score_batch(&batch, target).map_err(with_mask_context(start))?;
        if scores.len() != batch.len() {
            return Err(with_mask_context(start)(Error::Protocol("short score batch".into())));
        }
        out.extend(scores.into_iter().map(f64::from));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> ImageTensor {
        ImageTensor::new(2, 2, 3, (0..12).map(|i| i as f32 / 12.0).collect()).unwrap()
    }

    #[test]
    fn figure_four_cases() {
        assert!((debiased_score(0.005, 0.998, 0.991) - 0.012).abs() < 1e-9);
        assert!((debiased_score(0.981, 0.998, 0.986) - 0.993).abs() < 1e-9);
    }

    #[test]
    fn noise_vanishes_on_full_mask_and_zero_sigma() {
        let cfg = NoiseConfig { sigma: 0.1, seed: 5 };
        let ones = Mask::filled(2, 2, 1.0).unwrap();
        assert!(make_noise(&ones, 3, &cfg).unwrap().data().iter().all(|&v| v == 0.0));

        let half = Mask::filled(2, 2, 0.5).unwrap();
        let still = NoiseConfig { sigma: 0.0, seed: 5 };
        assert!(make_noise(&half, 3, &still).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_mask_noise_is_z() {
        let cfg = NoiseConfig { sigma: 0.1, seed: 5 };
        let zeros = Mask::filled(2, 2, 0.0).unwrap();
        let field = NoiseField::sample(2, 2, 3, &cfg).unwrap();
        assert_eq!(make_noise(&zeros, 3, &cfg).unwrap(), *field.z());
        assert!(field.z().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn negative_sigma_is_rejected() {
        let cfg = NoiseConfig { sigma: -0.1, seed: 0 };
        assert!(NoiseField::sample(1, 1, 1, &cfg).is_err());
    }

    #[test]
    fn masking_arithmetic() {
        let img = image();
        let ones = Mask::filled(2, 2, 1.0).unwrap();
        assert_eq!(apply_mask(&img, &ones).unwrap(), img);
        let zeros = Mask::filled(2, 2, 0.0).unwrap();
        assert!(apply_mask(&img, &zeros).unwrap().data().iter().all(|&v| v == 0.0));

        let flat = ImageTensor::new(1, 1, 3, vec![0.8; 3]).unwrap();
        let half = Mask::filled(1, 1, 0.5).unwrap();
        assert_eq!(apply_mask(&flat, &half).unwrap().data(), &[0.4, 0.4, 0.4]);

        assert!(apply_mask(&img, &Mask::filled(3, 2, 1.0).unwrap()).is_err());
    }

    #[test]
    fn mask_broadcasts_across_channels() {
        let img = ImageTensor::new(1, 2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let m = Mask::new(1, 2, vec![0.25, 0.75]).unwrap();
        assert_eq!(apply_mask(&img, &m).unwrap().data(), &[0.25, 0.25, 0.75, 0.75]);
    }
}

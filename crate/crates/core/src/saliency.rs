//! Aggregating per-mask impact scores into saliency maps, with optional
//! pixel-coverage-bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_gen::MaskSet;
use crate::tensor::minmax_normalize_f64;
use crate::types::{SaliencyKind, SaliencyMap};

/// Pixels with coverage below this are treated as uncovered.
pub const MIN_COVERAGE: f64 = 1e-12;

/// Per-pixel coverage frequency `ρ(x) = (1/K) Σ M_i(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl CoverageMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The coverage map as an (unnormalized) f32 map.
    pub fn to_map(&self) -> SaliencyMap {
        SaliencyMap::new(
            self.height,
            self.width,
            self.values.iter().map(|&v| v as f32).collect(),
            SaliencyKind::Raw,
        )
        .expect("coverage dimensions are valid")
    }
}

fn check_lengths(scores: &[f64], masks: &MaskSet) -> Result<()> {
    if scores.len() != masks.len() {
        return Err(Error::mismatch(
            format!("{} scores (one per mask)", masks.len()),
            format!("{} scores", scores.len()),
        ));
    }
    Ok(())
}

fn weighted_sum(scores: &[f64], masks: &MaskSet) -> Vec<f64> {
    let (h, w) = masks.dims();
    let mut acc = vec![0.0f64; h * w];
    for (&s, mask) in scores.iter().zip(masks.masks()) {
        for (a, &m) in acc.iter_mut().zip(mask.values()) {
            *a += s * f64::from(m);
        }
    }
    acc
}

/// `S(x) = Σ_i s_i · M_i(x)`, accumulated in f64.
pub fn raw_saliency_values(scores: &[f64], masks: &MaskSet) -> Result<Vec<f64>> {
    check_lengths(scores, masks)?;
    Ok(weighted_sum(scores, masks))
}

pub fn raw_saliency(scores: &[f64], masks: &MaskSet) -> Result<SaliencyMap> {
    let (h, w) = masks.dims();
    let values = raw_saliency_values(scores, masks)?;
    SaliencyMap::new(h, w, values.into_iter().map(|v| v as f32).collect(), SaliencyKind::Raw)
}

pub fn coverage(masks: &MaskSet) -> CoverageMap {
    let (height, width) = masks.dims();
    let k = masks.len() as f64;
    let values = weighted_sum(&vec![1.0; masks.len()], masks)
        .into_iter()
        .map(|v| v / k)
        .collect();
    CoverageMap { height, width, values }
}

/// `S^c(x) = S(x) / ρ(x)`, and 0 wherever `ρ(x)` is (numerically) zero.
pub fn corrected_saliency_values(scores: &[f64], masks: &MaskSet) -> Result<Vec<f64>> {
    let raw = raw_saliency_values(scores, masks)?;
    let rho = coverage(masks);
    Ok(raw
        .into_iter()
        .zip(rho.values())
        .map(|(s, &r)| if r < MIN_COVERAGE { 0.0 } else { s / r })
        .collect())
}

pub fn corrected_saliency(scores: &[f64], masks: &MaskSet) -> Result<SaliencyMap> {
    let (h, w) = masks.dims();
    let values = corrected_saliency_values(scores, masks)?;
    SaliencyMap::new(
        h,
        w,
        values.into_iter().map(|v| v as f32).collect(),
        SaliencyKind::Corrected,
    )
}

pub fn normalize(map: &SaliencyMap) -> SaliencyMap {
    let values: Vec<f64> = map.values().iter().map(|&v| f64::from(v)).collect();
    normalize_values(map.height(), map.width(), &values)
}

/// Min-max normalize an f64 map straight to a normalized saliency map,
/// skipping the intermediate f32 rounding.
pub fn normalize_values(height: usize, width: usize, values: &[f64]) -> SaliencyMap {
    SaliencyMap::new(height, width, minmax_normalize_f64(values), SaliencyKind::Normalized)
        .expect("caller passes a consistent shape")
}

/// Split of the scores into their mean `μ` and deviations `β_i = s_i − μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub mu: f64,
    pub betas: Vec<f64>,
    pub k: usize,
    /// Population variance of the scores.
    pub variance: f64,
}

/// Mean score above which a prediction is considered causally
/// overdetermined.
pub const OVERDETERMINED_MU: f64 = 0.9;

impl Decomposition {
    pub fn new(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument("no scores to decompose".into()));
        }
        let k = scores.len();
        let mu = scores.iter().sum::<f64>() / k as f64;
        let betas: Vec<f64> = scores.iter().map(|s| s - mu).collect();
        let variance = betas.iter().map(|b| b * b).sum::<f64>() / k as f64;
        Ok(Self { mu, betas, k, variance })
    }

    pub fn is_overdetermined(&self) -> bool {
        self.mu > OVERDETERMINED_MU
    }
}

/// The two additive parts of the raw and corrected saliency at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDecomposition {
    /// `(Σ β_i M_i(x), μ K ρ(x))`; sums to `S(x)`.
    pub raw: (f64, f64),
    /// `(Σ β_i M_i(x) / ρ(x), μ K)`; sums to `S^c(x)`. Both zero when
    /// the pixel is uncovered.
    pub corrected: (f64, f64),
    pub coverage: f64,
}

pub fn decompose(scores: &[f64], masks: &MaskSet, pixel: usize) -> Result<PixelDecomposition> {
    check_lengths(scores, masks)?;
    let (h, w) = masks.dims();
    if pixel >= h * w {
        return Err(Error::InvalidArgument(format!("pixel {pixel} outside {h}x{w} map")));
    }
    let dec = Decomposition::new(scores)?;
    let k = dec.k as f64;
    let values_at = masks.masks().iter().map(|m| f64::from(m.values()[pixel]));
    let deviation: f64 = dec.betas.iter().zip(values_at.clone()).map(|(b, m)| b * m).sum();
    let rho = values_at.sum::<f64>() / k;
    let corrected = if rho < MIN_COVERAGE {
        (0.0, 0.0)
    } else {
        (deviation / rho, dec.mu * k)
    };
    Ok(PixelDecomposition {
        raw: (deviation, dec.mu * k * rho),
        corrected,
        coverage: rho,
    })
}

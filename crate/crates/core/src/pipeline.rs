//! End-to-end explanation of one image, and its evaluation.

use std::time::Instant;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{auc, deletion_curve, insertion_curve, pointing_game, BoundingBox};
use crate::mask_gen::{
    agglomerative_cluster, cluster_means, embeddings_to_masks, random_masks, ClusteringConfig, MaskSet,
    RandomMaskConfig,
};
use crate::oracle::ModelOracle;
use crate::saliency::{
    corrected_saliency_values, coverage, normalize_values, raw_saliency_values, CoverageMap, Decomposition,
};
use crate::scoring::{debiased_impact, raw_impact, ImpactScore, NoiseConfig, ScoreMode};
use crate::types::{Image, SaliencyKind, SaliencyMap, ScoreVector};

/// Mixed into the run seed for random masks so they do not share a stream
/// with the scoring noise.
const RANDOM_MASK_SALT: u64 = 0x5EED_0F4A_5C00;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Embedding feature-map masks reduced by clustering.
    #[default]
    Vit,
    /// One embedding feature-map mask per dimension, no clustering.
    VitUnclustered,
    /// Random upsampled binary-grid masks.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    /// Block to tap; the deepest available block when unset.
    pub block_index: Option<usize>,
    pub delta: f64,
    pub sigma: f64,
    pub mask_mode: MaskMode,
    pub num_random_masks: usize,
    pub random_grid: usize,
    pub random_keep_prob: f64,
    pub score_mode: ScoreMode,
    pub pcb: bool,
    pub seed: u64,
    /// Class to explain; the oracle's top-1 class when unset.
    pub target_class: Option<usize>,
    /// Masks per oracle call.
    pub batch_size: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            block_index: None,
            delta: 0.1,
            sigma: 0.1,
            mask_mode: MaskMode::Vit,
            num_random_masks: 5000,
            random_grid: 7,
            random_keep_prob: 0.5,
            score_mode: ScoreMode::Debiased,
            pcb: true,
            seed: 0,
            target_class: None,
            batch_size: 64,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "delta must be >= 0, got {}",
                self.delta
            )));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mask_seconds: f64,
    pub scoring_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub target_class: usize,
    pub masks: MaskSet,
    /// Per-mask score used for aggregation (debiased or raw).
    pub scores: Vec<f64>,
    /// Per-mask score terms; empty in raw mode.
    pub impacts: Vec<ImpactScore>,
    pub decomposition: Decomposition,
    /// Raw sum (PCB off) or coverage-corrected sum (PCB on), before
    /// normalization.
    pub aggregate: SaliencyMap,
    pub saliency: SaliencyMap,
    pub coverage: CoverageMap,
    pub timing: Timing,
}

impl Explanation {
    pub fn num_masks(&self) -> usize {
        self.masks.len()
    }
}

/// Build the mask set for `image` according to `cfg.mask_mode`.
pub fn generate_masks<O: ModelOracle + ?Sized>(oracle: &O, image: &Image, cfg: &ExplainConfig) -> Result<MaskSet> {
    let info = oracle.info()?;
    let target = (image.height(), image.width());
    match cfg.mask_mode {
        MaskMode::Random => random_masks(
            &RandomMaskConfig {
                count: cfg.num_random_masks,
                grid: cfg.random_grid,
                keep_prob: cfg.random_keep_prob,
                seed: cfg.seed ^ RANDOM_MASK_SALT,
            },
            target,
        ),
        MaskMode::Vit | MaskMode::VitUnclustered => {
            let block_index = cfg.block_index.unwrap_or_else(|| info.last_block().block_index);
            if info.block(block_index).is_none() {
                return Err(Error::InvalidArgument(format!("oracle has no block {block_index}")));
            }
            let block = oracle.embeddings(image, block_index)?;
            let vit = embeddings_to_masks(&block, target)?;
            if cfg.mask_mode == MaskMode::VitUnclustered {
                return Ok(vit);
            }
            let clusters = agglomerative_cluster(&vit, &ClusteringConfig { delta: cfg.delta })?;
            cluster_means(&vit, &clusters)
        }
    }
}

pub fn resolve_target<O: ModelOracle + ?Sized>(oracle: &O, image: &Image, requested: Option<usize>) -> Result<usize> {
    let num_classes = oracle.info()?.num_classes;
    match requested {
        Some(y) if y < num_classes => Ok(y),
        Some(y) => Err(Error::InvalidArgument(format!(
            "target class {y} outside the oracle's {num_classes} classes"
        ))),
        None => ScoreVector::top1(&oracle.class_scores(image.as_tensor())?)
            .ok_or_else(|| Error::Protocol("oracle returned an empty class vector".into())),
    }
}

/// Aggregate per-mask scores into the unnormalized and normalized maps.
pub fn aggregate(scores: &[f64], masks: &MaskSet, pcb: bool) -> Result<(SaliencyMap, SaliencyMap)> {
    let (h, w) = masks.dims();
    let (values, kind) = if pcb {
        (corrected_saliency_values(scores, masks)?, SaliencyKind::Corrected)
    } else {
        (raw_saliency_values(scores, masks)?, SaliencyKind::Raw)
    };
    let unnormalized = SaliencyMap::new(h, w, values.iter().map(|&v| v as f32).collect(), kind)?;
    Ok((unnormalized, normalize_values(h, w, &values)))
}

pub fn explain<O: ModelOracle + ?Sized>(oracle: &O, image: &Image, cfg: &ExplainConfig) -> Result<Explanation> {
    cfg.validate()?;
    let started = Instant::now();
    oracle.info()?.check_input(image)?;
    let target_class = resolve_target(oracle, image, cfg.target_class)?;

    let masks = generate_masks(oracle, image, cfg)?;
    let mask_seconds = started.elapsed().as_secs_f64();

    let scoring_started = Instant::now();
    let (scores, impacts) = match cfg.score_mode {
        ScoreMode::Debiased => {
            let noise = NoiseConfig {
                sigma: cfg.sigma,
                seed: cfg.seed,
            };
            let impacts = debiased_impact(image.as_tensor(), target_class, &masks, oracle, &noise, cfg.batch_size)?;
            (impacts.iter().map(|s| s.debiased).collect(), impacts)
        }
        ScoreMode::Raw => (
            raw_impact(image.as_tensor(), target_class, &masks, oracle, cfg.batch_size)?,
            Vec::new(),
        ),
    };
    let scoring_seconds = scoring_started.elapsed().as_secs_f64();

    let decomposition = Decomposition::new(&scores)?;
    let (aggregate, saliency) = aggregate(&scores, &masks, cfg.pcb)?;
    let coverage = coverage(&masks);
    Ok(Explanation {
        target_class,
        masks,
        scores,
        impacts,
        decomposition,
        aggregate,
        saliency,
        coverage,
        timing: Timing {
            mask_seconds,
            scoring_seconds,
            total_seconds: started.elapsed().as_secs_f64(),
        },
    })
}

/// Per-image evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_id: String,
    pub target_class: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub mu: f64,
    pub score_variance: f64,
    pub deletion_auc: f64,
    pub insertion_auc: f64,
    pub pointing_hit: Option<bool>,
    pub explain_seconds: f64,
}

/// Explain `image` and score the explanation. `boxes` must already be in
/// the oracle's input coordinates; an empty slice skips the pointing game.
pub fn evaluate_image<O: ModelOracle + ?Sized>(
    oracle: &O,
    image_id: &str,
    image: &Image,
    cfg: &ExplainConfig,
    boxes: &[BoundingBox],
    steps: usize,
) -> Result<ImageReport> {
    let explanation = explain(oracle, image, cfg)?;
    let target = explanation.target_class;
    let del = deletion_curve(image.as_tensor(), &explanation.saliency, target, oracle, steps)?;
    let ins = insertion_curve(image.as_tensor(), &explanation.saliency, target, oracle, steps)?;
    let pointing_hit = if boxes.is_empty() {
        None
    } else {
        Some(pointing_game(&explanation.saliency, boxes)?)
    };
    Ok(ImageReport {
        image_id: image_id.to_string(),
        target_class: target,
        k: explanation.num_masks(),
        mu: explanation.decomposition.mu,
        score_variance: explanation.decomposition.variance,
        deletion_auc: auc(&del),
        insertion_auc: auc(&ins),
        pointing_hit,
        explain_seconds: explanation.timing.total_seconds,
    })
}

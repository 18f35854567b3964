//! Saliency explanations for vision transformers.
//!
//! Masks come from the patch embeddings of one transformer block: every
//! embedding dimension is upsampled to a pixel-level mask, and near-duplicate
//! masks are merged by average-linkage clustering on cosine distance. Each
//! mask is scored by its debiased causal impact on the target class, and the
//! scores are aggregated into a saliency map that is divided by the per-pixel
//! mask coverage.
//!
//! The model is reached through [`oracle::ModelOracle`]. A small built-in
//! transformer ([`oracle::ToyVit`]) is provided for testing; external models
//! speak the framed protocol in [`oracle::wire`].
//!
//! ```
//! use vitcx::{explain, ExplainConfig, Image, ImageTensor, ModelOracle, ToyVit, ToyVitConfig};
//!
//! let oracle = ToyVit::new(ToyVitConfig::default()).unwrap();
//! let info = oracle.info().unwrap();
//! let data = (0..info.input_height * info.input_width * 3).map(|i| (i % 17) as f32 / 16.0).collect();
//! let image = Image::try_from(ImageTensor::new(info.input_height, info.input_width, 3, data).unwrap()).unwrap();
//! let explanation = explain(&oracle, &image, &ExplainConfig::default()).unwrap();
//! assert_eq!(explanation.saliency.dims(), (32, 32));
//! ```

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod mask_gen;
pub mod oracle;
pub mod pipeline;
pub mod raster;
pub mod saliency;
pub mod scoring;
pub mod tensor;
pub mod types;

pub use error::{Error, Result};
pub use eval::{auc, deletion_curve, insertion_curve, pointing_game, BoundingBox, PerturbationCurve};
pub use mask_gen::{agglomerative_cluster, cluster_means, embeddings_to_masks, ClusteringConfig, MaskSet};
pub use oracle::{ModelOracle, OracleInfo, OracleSpec, ToyVit, ToyVitConfig, WireOracle};
pub use pipeline::{evaluate_image, explain, ExplainConfig, Explanation, MaskMode};
pub use saliency::{corrected_saliency, coverage, raw_saliency, Decomposition};
pub use scoring::{debiased_impact, debiased_score, NoiseConfig, ScoreMode};
pub use types::{EmbeddingBlock, Image, ImageTensor, Mask, SaliencyKind, SaliencyMap};

//! Classifier oracles: anything that can report patch embeddings at a
//! block and class scores for a batch of images.

mod toy;
pub mod wire;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EmbeddingBlock, Image, ImageTensor};

pub use toy::{ToyForward, ToyVit, ToyVitConfig};
pub use wire::WireOracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSemantics {
    #[default]
    Softmax,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub block_index: usize,
    pub grid_side: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleInfo {
    pub input_height: usize,
    pub input_width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub available_blocks: Vec<BlockInfo>,
    #[serde(default)]
    pub score_semantics: ScoreSemantics,
}

impl OracleInfo {
    pub fn validate(&self) -> Result<()> {
        if self.available_blocks.is_empty() {
            return Err(Error::Protocol("oracle reports no embedding blocks".into()));
        }
        if self.input_height == 0 || self.input_width == 0 || self.channels == 0 || self.num_classes == 0 {
            return Err(Error::Protocol("oracle reports an empty input or class space".into()));
        }
        Ok(())
    }

    pub fn block(&self, block_index: usize) -> Option<&BlockInfo> {
        self.available_blocks.iter().find(|b| b.block_index == block_index)
    }

    /// The deepest listed block.
    pub fn last_block(&self) -> &BlockInfo {
        self.available_blocks
            .iter()
            .max_by_key(|b| b.block_index)
            .expect("validated oracle info has at least one block")
    }

    pub fn check_input(&self, image: &ImageTensor) -> Result<()> {
        let expected = (self.input_height, self.input_width, self.channels);
        if image.shape() != expected {
            return Err(Error::mismatch(
                format!("{}x{}x{} input", expected.0, expected.1, expected.2),
                format!("{:?}", image.shape()),
            ));
        }
        Ok(())
    }
}

pub trait ModelOracle {
    fn info(&self) -> Result<OracleInfo>;

    /// Patch-token embeddings (no class or distillation tokens) tapped after
    /// the attention module of `block_index`.
    fn embeddings(&self, image: &Image, block_index: usize) -> Result<EmbeddingBlock>;

    /// Target-class score for each image, in input order.
    fn score_batch(&self, images: &[ImageTensor], target: usize) -> Result<Vec<f32>>;

    /// Full class-score vector of one image.
    fn class_scores(&self, image: &ImageTensor) -> Result<Vec<f32>>;
}

impl<T: ModelOracle + ?Sized> ModelOracle for &T {
    fn info(&self) -> Result<OracleInfo> {
        (**self).info()
    }

    fn embeddings(&self, image: &Image, block_index: usize) -> Result<EmbeddingBlock> {
        (**self).embeddings(image, block_index)
    }

    fn score_batch(&self, images: &[ImageTensor], target: usize) -> Result<Vec<f32>> {
        (**self).score_batch(images, target)
    }

    fn class_scores(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        (**self).class_scores(image)
    }
}

impl<T: ModelOracle + ?Sized> ModelOracle for Box<T> {
    fn info(&self) -> Result<OracleInfo> {
        (**self).info()
    }

    fn embeddings(&self, image: &Image, block_index: usize) -> Result<EmbeddingBlock> {
        (**self).embeddings(image, block_index)
    }

    fn score_batch(&self, images: &[ImageTensor], target: usize) -> Result<Vec<f32>> {
        (**self).score_batch(images, target)
    }

    fn class_scores(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        (**self).class_scores(image)
    }
}

/// Where to find an oracle: `builtin-toy`, `subprocess:<command>` or
/// `tcp:<host:port>`.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleSpec {
    BuiltinToy(ToyVitConfig),
    Subprocess(String),
    Tcp(String),
}

impl OracleSpec {
    /// Open a fresh oracle connection.
    pub fn connect(&self) -> Result<Box<dyn ModelOracle + Send>> {
        Ok(match self {
            OracleSpec::BuiltinToy(cfg) => Box::new(ToyVit::new(cfg.clone())?),
            OracleSpec::Subprocess(cmd) => Box::new(WireOracle::spawn(cmd)?),
            OracleSpec::Tcp(addr) => Box::new(WireOracle::connect_tcp(addr)?),
        })
    }
}

impl FromStr for OracleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "builtin-toy" {
            return Ok(OracleSpec::BuiltinToy(ToyVitConfig::default()));
        }
        if let Some(cmd) = s.strip_prefix("subprocess:") {
            if cmd.trim().is_empty() {
                return Err(Error::InvalidArgument("subprocess oracle needs a command".into()));
            }
            return Ok(OracleSpec::Subprocess(cmd.to_string()));
        }
        if let Some(addr) = s.strip_prefix("tcp:") {
            if addr.is_empty() {
                return Err(Error::InvalidArgument("tcp oracle needs host:port".into()));
            }
            return Ok(OracleSpec::Tcp(addr.to_string()));
        }
        Err(Error::InvalidArgument(format!(
            "unknown oracle `{s}`; expected builtin-toy, subprocess:<command> or tcp:<host:port>"
        )))
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleSpec::BuiltinToy(_) => f.write_str("builtin-toy"),
            OracleSpec::Subprocess(cmd) => write!(f, "subprocess:{cmd}"),
            OracleSpec::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}

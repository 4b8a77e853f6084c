//! Inference-only logmel ResNet-CoT countermeasure.
//!
//! Layout: four stages, each an adapter (conv, BN, ReLU) followed by Res-CoT
//! blocks; frequency is averaged out, attentive statistics pooling collapses
//! time, and a linear layer produces `[l_spoof, l_bonafide]`. Batch norm runs
//! with fixed running statistics since no training happens here.
//!
//! CoT block used here: keys are a grouped k x k conv (static context), values
//! a 1x1 conv, and attention logits come from two stacked 1x1 convs over
//! `concat[keys, x]`, one k x k softmax per head and position. The output is
//! static plus dynamic context.

mod aggregate;
mod model;
mod ops;
mod params;

pub use aggregate::{aggregate_layers, init_aggregator, AggregatorConfig};
pub use model::{
    adapter_forward, attentive_stats_pool, attentive_stats_pool_with, cot_block_forward,
    detector_forward, res_cot_forward, Detector, POOL_EPS,
};
pub use params::{
    count_parameters, expected_shapes, init_parameters, load_parameters, save_parameters,
    weights_manifest_path, ParameterStore, Tensor, WEIGHTS_FORMAT_VERSION,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Four stride-2 reductions along time need at least this many frames.
pub const MIN_FRAMES: usize = 16;
/// Three stride-2 reductions along frequency need at least this many bands.
pub const MIN_BANDS: usize = 8;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("input has {frames} frames, need at least {min}")]
    TooFewFrames { frames: usize, min: usize },
    #[error("input has {bands} bands, need at least {min}")]
    TooFewBands { bands: usize, min: usize },
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("shape mismatch for {name}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("empty sequence")]
    EmptySequence,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("weight blob truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("weight blob checksum mismatch")]
    Checksum,
    #[error("unsupported weight format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed weight manifest: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub stage_channels: [usize; 4],
    pub blocks_per_stage: [usize; 4],
    pub cot_kernel: usize,
    /// Groups of the key (static context) convolution.
    pub cot_groups: usize,
    /// Attention heads; channels within a head share one softmax window.
    pub cot_heads: usize,
    /// The attention bottleneck has `2C / cot_reduction` channels.
    pub cot_reduction: usize,
    pub pool_attention_dim: usize,
    pub n_classes: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            stage_channels: [32, 64, 128, 256],
            blocks_per_stage: [2, 2, 2, 2],
            cot_kernel: 3,
            cot_groups: 8,
            cot_heads: 8,
            cot_reduction: 8,
            pool_attention_dim: 128,
            n_classes: 2,
        }
    }
}

impl DetectorConfig {
    /// Small but structurally complete network for fast end-to-end runs.
    pub fn tiny() -> Self {
        Self {
            stage_channels: [8, 8, 16, 16],
            blocks_per_stage: [1, 1, 1, 1],
            cot_kernel: 3,
            cot_groups: 4,
            cot_heads: 4,
            cot_reduction: 4,
            pool_attention_dim: 8,
            n_classes: 2,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.stage_channels[3]
    }

    pub(crate) fn attention_mid(&self, c: usize) -> usize {
        2 * c / self.cot_reduction
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: String| Err(DetectorError::InvalidConfig(m));
        if self.n_classes != 2 {
            return bad(format!("n_classes must be 2, got {}", self.n_classes));
        }
        if self.cot_kernel == 0 || self.cot_kernel % 2 == 0 {
            return bad(format!("cot_kernel must be odd, got {}", self.cot_kernel));
        }
        if self.pool_attention_dim == 0 || self.cot_groups == 0 || self.cot_heads == 0 || self.cot_reduction == 0 {
            return bad("pool_attention_dim, cot_groups, cot_heads and cot_reduction must be >= 1".into());
        }
        for (&c, &b) in self.stage_channels.iter().zip(&self.blocks_per_stage) {
            if c == 0 || b == 0 {
                return bad("stage channels and block counts must be >= 1".into());
            }
            if c % self.cot_groups != 0 || c % self.cot_heads != 0 {
                return bad(format!("{c} channels not divisible by cot groups/heads"));
            }
            if self.attention_mid(c) == 0 {
                return bad(format!("cot_reduction {} too large for {c} channels", self.cot_reduction));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logits {
    pub l_spoof: f64,
    pub l_bonafide: f64,
}

impl Logits {
    pub fn score(&self) -> f64 {
        score(*self)
    }
}

/// Higher favours spoof.
pub fn score(logits: Logits) -> f64 {
    0.5 * (logits.l_spoof - logits.l_bonafide)
}

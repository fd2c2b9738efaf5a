//! Primitive-level vector-quantized codec: a transformer encoder pools each
//! pair's primitives into vectors, a codebook quantizes them with EMA
//! updates and straight-through gradients, and an autoregressive decoder
//! reconstructs the token stream under a squared-EMD objective. Adapters
//! align codebook entries with a frozen mock embedding/logit pair so codes
//! become backbone-native ids.

mod adapter;
mod backbone;
mod checkpoint;
mod codebook;
mod codec;
mod emd;
mod graph;
mod mat;
mod net;
mod train;

pub use adapter::{train_adapters, AdapterPair, AdapterReport, AdapterTrainConfig};
pub use backbone::MockBackbone;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use codebook::Codebook;
pub use codec::{split_pairs, PairItem, VqCodec, SEPARATOR_ID};
pub use emd::{emd_between, emd_loss};
pub use graph::{Graph, NodeId, ParamSet};
pub use mat::Mat;
pub use train::{
    gradient_check, train_vqvae, Adam, EpochStats, GradCheckReport, Quantization, TrainReport,
};

use crate::tokenize::Variant;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum VqError {
    #[error("pair has {len} tokens, max is {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("distribution mass {mass} is not 1 within 1e-6")]
    Unnormalized { mass: f64 },
    #[error("frozen logit map has rank {rank}, below the codec dimension {needed}")]
    DegenerateBackbone { rank: usize, needed: usize },
    #[error("id {id} is outside the mapped vocabulary")]
    UnknownId { id: u32 },
    #[error("codec has no trained adapters")]
    MissingAdapters,
    #[error("checkpoint rejected: {reason}")]
    BadCheckpoint { reason: String },
    #[error("segmentation failed: {0}")]
    Tokenize(#[from] crate::tokenize::TokenizeError),
    #[error("reconstruction is not a valid pair: {0}")]
    Parse(#[from] crate::sem::ParseError),
}

/// Codec hyperparameters. `desk()` is the test-scale default; the
/// paper-scale preset is expressible but far outside desk runtimes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub codebook_size: usize,
    pub max_primitives: usize,
    pub max_pair_len: usize,
    pub commitment_weight: f64,
    pub ema_decay: f64,
    pub learn_rate: f64,
    /// Geometric per-epoch decay toward this final rate (None keeps the
    /// learning rate constant).
    pub learn_rate_final: Option<f64>,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Fraction of pairs held out for early stopping; 0 validates on the
    /// training set itself (memorization runs).
    pub val_fraction: f64,
    pub use_positions: bool,
    pub variant: Variant,
    /// Stop once greedy token-exact reconstruction on the training set
    /// reaches this rate.
    pub exact_stop: Option<f64>,
    /// Epoch interval for the reconstruction probe above.
    pub eval_every: usize,
    /// Cross-entropy stabilizer weight added to the EMD objective. The
    /// squared-CDF loss has vanishing gradients at every softmax vertex,
    /// including wrong ones; a small CE term shares the same global
    /// minimum (exact one-hot at the target) and restores the escape
    /// direction.
    pub ce_weight: f64,
    /// Epoch after which the codebook stops moving (no EMA updates or
    /// restarts), letting the decoder converge against fixed conditioning.
    pub freeze_codebook_after: Option<usize>,
}

impl CodecConfig {
    /// Desk-scale defaults used across tests.
    pub fn desk() -> CodecConfig {
        CodecConfig {
            d_model: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 4,
            ffn_dim: 256,
            codebook_size: 256,
            max_primitives: crate::tokenize::MAX_PRIMITIVES,
            max_pair_len: 256,
            commitment_weight: 0.25,
            ema_decay: 0.99,
            learn_rate: 3e-4,
            learn_rate_final: None,
            epochs: 250,
            patience: 25,
            batch_size: 16,
            val_fraction: 0.0,
            use_positions: true,
            variant: Variant::Curve,
            exact_stop: None,
            eval_every: 10,
            ce_weight: 0.1,
            freeze_codebook_after: None,
        }
    }

    /// The configuration reported for full-scale training; not exercised in
    /// tests.
    pub fn paper_scale() -> CodecConfig {
        CodecConfig {
            d_model: 512,
            encoder_layers: 5,
            decoder_layers: 5,
            heads: 8,
            ffn_dim: 2048,
            codebook_size: 2048,
            max_pair_len: 1024,
            ..CodecConfig::desk()
        }
    }

    /// Tiny setting for gradient checks and fast unit tests.
    pub fn tiny() -> CodecConfig {
        CodecConfig {
            d_model: 16,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            ffn_dim: 32,
            codebook_size: 16,
            max_pair_len: 128,
            ..CodecConfig::desk()
        }
    }
}

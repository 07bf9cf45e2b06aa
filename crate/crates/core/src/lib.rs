//! Contrastive audio representation learning with augmentation tracking.
//!
//! The pipeline: a labelled synthetic corpus, a tracked augmentation chain,
//! log-mel features, N x M view batches with positive masks, a conv encoder
//! with one or more projection heads, a masked contrastive objective, an Adam
//! trainer, and frozen-embedding evaluation.

pub mod analysis;
pub mod audio;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod fft;
pub mod model;
pub mod nn;
pub mod objective;
pub mod seed;
pub mod trainer;
pub mod views;

pub use audio::{AudioClip, CHUNK_SAMPLES, SAMPLE_RATE};
pub use augment::{apply_chain, AugKind, AugParams, AugmentationRecord, ChainConfig, NuclearAugmentation};
pub use checkpoint::Checkpoint;
pub use config::{EvalConfig, RunConfig};
pub use corpus::{generate_corpus, ClipKind, ClipSpec, CorpusConfig};
pub use error::{Error, Result};
pub use features::{log_mel, MelExtractor, MelParams, MelSpectrogram};
pub use model::{build_model, EmbeddingBundle, Model, ModelConfig, Pooling, Space, Topology};
pub use objective::{contrastive_loss, loev_loss, LossBreakdown, LossConfig};
pub use trainer::{adam_step, pretrain, resume, AdamHyper, AdamState, PretrainConfig, StepLog, TrainConfig};
pub use views::{build_batch, build_positive_masks, PositiveMasks, SamplingStrategy, Strategy, ViewBatch};

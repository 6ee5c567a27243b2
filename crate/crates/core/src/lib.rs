//! Memorization auditing for image generators.
//!
//! A small convolutional encoder is trained so that the cosine similarity of
//! two embeddings regresses the registered, brightness-normalized SSIM of the
//! underlying images. Real/synthetic pairs are then classified as
//! `different`, `similar` or `duplicate` with two thresholds, and the
//! memorization score is the percentage of real images that have at least one
//! duplicate among the synthetic ones.
//!
//! Module map:
//!
//! - [`tensor`]: dense tensors with reverse-mode autodiff and AdamW.
//! - [`image`]: images, file formats, augmentations, rigid registration.
//! - [`metrics`]: SSIM (optionally without its luminance term) and FSIM.
//! - [`encoder`]: the encoder, pair sampling, training, checkpoints.
//! - [`audit`]: embedding indexes, blocked search, thresholding, sweeps.
//! - [`eval`]: precision/recall/F1, silhouette, histograms, benchmarks.
//! - [`synth`]: deterministic phantom corpora and test-set curation.

pub mod audit;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod image;
pub mod manifest;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};

//! Learned image embeddings whose cosine similarity approximates registered
//! SSIM, with training, pair sampling and checkpoints.

mod checkpoint;
mod config;
mod model;
mod pairs;
mod train;

pub use checkpoint::{
    file_sha256, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CHECKPOINT_VERSION,
};
pub use config::{EncoderConfig, TrainConfig};
pub use model::{forward_graph, parameter_layout, standardize, Embedding, Encoder};
pub use pairs::{build_pair_set, score_pairs, ssim_bin, water_fill, Dataset, PairCache, TrainingPair};
pub use train::{loss_batch, train, train_on_pairs, validate_mae, TrainOutcome};

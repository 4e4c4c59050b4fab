//! A small CPU tensor framework with hand-written backpropagation.
//!
//! Tensors are `f64`, row-major and channels-last. Pair inputs are encoded
//! as `[B, 4, N, 2]`: one-hot rows, sequence columns and one channel per
//! strand. The three architectures used by the pipeline are built by
//! [`build_cnn`], [`build_cnn_lite`] and [`build_mlp`].

mod layers;
mod model;
mod tensor;
mod train;

use thiserror::Error;

pub use layers::{BatchNorm, Conv, Dense, Dropout, Layer, BN_EPS, BN_MOMENTUM};
pub use model::{
    build_cnn, build_cnn_lite, build_mlp, encode_pairs, load_checkpoint, save_checkpoint, with_both_orders, Arch,
    Encoding, Mode, Model, BOTH_ORDERS_KEY, CHECKPOINT_MAGIC, MLP_DROPOUT, MLP_HIDDEN,
};
pub use tensor::{Param, Tensor};
pub use train::{gradient_check, predict_batch, train, Adam, EpochStats, GradCheck, History, Loss, TrainConfig};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Seq(#[from] crate::seq::SeqError),
}

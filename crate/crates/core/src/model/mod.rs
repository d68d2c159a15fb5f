//! Encoder + linear classifier, optimizers, training loop and checkpoints.

pub mod checkpoint;
mod network;
mod optim;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use network::{
    EncoderClassifier, EncoderKind, ForwardCache, LinearClassifier, MIN_FEATURE_NORM,
};
pub use optim::{Optimizer, OptimizerKind};
pub(crate) use train::argmax;
pub use train::{
    accuracy, batch_objective, full_pass_stats, init_model, predict, train, train_step,
    EpochRecord, Objective, StatsRefresh, StepConfig, StepStats, TrainConfig, TrainHistory,
    TrainOutput, TrainState,
};

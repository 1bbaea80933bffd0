//! The segmentation network, its loss and schedule, augmentation, and the
//! training and inference drivers.

mod augment;
pub mod gradsuite;
mod infer;
mod loss;
mod model;
mod train;

use thiserror::Error;

pub use augment::{augment, AugmentConfig, BLUR_KERNEL};
pub use gradsuite::{run_gradsuite, GradRow, GRADCHECK_TOLERANCE};
pub use infer::{infer, Inference};
pub use loss::{bce_loss, dice_loss, poly_lr, soft_dice, total_loss, LossOutput, LossWeights, DICE_EPS, PROB_CLAMP};
pub use model::{ArchConfig, ConvPath, Model, Trace};
pub use train::{batch_tensors, dataset_soft_dice, history_table, train, EpochRecord, Sample, TrainConfig, TrainOutcome};

use crate::prefilter::PrefilterError;
use crate::specio::SpecioError;
use crate::tensorkit::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input {height}x{width} is not divisible by {divisor}")]
    InputDims { height: usize, width: usize, divisor: usize },
    #[error("input has {got} channels, model expects {want}")]
    InputChannels { got: usize, want: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Prefilter(#[from] PrefilterError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: total {loss}, bce {bce}, dice {dice}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
        bce: f64,
        dice: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] SpecioError),
}

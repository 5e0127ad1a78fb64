//! Small fully convolutional pixel classifier, its trainer and weight codec.
//!
//! Everything runs in f64 and is deterministic for a given seed.

mod codec;
mod model;
mod train;

pub use codec::{decode_weights, encode_weights, WEIGHTS_MAGIC};
pub use model::{
    class_probabilities, forward, ConvLayer, FcnModel, DEFAULT_CHANNELS, KERNEL, SCREW_CHANNEL,
    WEIGHTS_VERSION,
};
pub use train::{
    batch_loss, loss_and_grad, lr_at, make_ensemble, train, weighted_loss_and_grad, Gradients,
    LabeledPatch, TrainedModel, TrainingConfig, PATCH_SIZE,
};

use crate::imgproc::{GrayImage, ProbabilityMap};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FcnError {
    #[error("model shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("model contains non-finite weights")]
    NonFiniteWeights,
    #[error("image {width}x{height} smaller than receptive field {min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("patch must be 34x34, got {width}x{height}")]
    PatchShape { width: usize, height: usize },
    #[error("empty batch or dataset")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("training diverged in epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("not a weight file")]
    BadMagic,
    #[error("unsupported weight format version {0}")]
    UnsupportedVersion(u32),
    #[error("weight file truncated or malformed")]
    Truncated,
}

/// Mean screw-probability map of an ensemble.
pub fn ensemble_forward(models: &[FcnModel], img: &GrayImage) -> Result<ProbabilityMap, FcnError> {
    if models.is_empty() {
        return Err(FcnError::ShapeMismatch("empty ensemble"));
    }
    let maps = models
        .iter()
        .map(|m| forward(m, img))
        .collect::<Result<alloc::vec::Vec<_>, _>>()?;
    ProbabilityMap::mean_of(&maps)
        .map_err(|_| FcnError::ShapeMismatch("ensemble maps differ in size"))
}

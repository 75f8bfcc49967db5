//! Feed-forward classification heads trained from scratch: forward pass,
//! softmax cross-entropy, backpropagation, Adam and early stopping.

mod gradcheck;
mod io;
mod mlp;
mod train;

use thiserror::Error;

pub use gradcheck::{gradient_check, gradient_check_selected, relative_error, ParamSelection};
pub use io::{load_model, model_from_str, model_to_string, save_model, WEIGHT_FORMAT_VERSION};
pub use mlp::{confidence_from_logits, softmax, HeadKind, Layer, MlpModel};
pub use train::{
    classification_report, train, ClassificationReport, EpochRecord, LabeledPairExample, TrainConfig,
    TrainingLog,
};

/// Width of a pair feature vector: four blocks of 384.
pub const FEATURE_DIM: usize = 4 * crate::providers::EMBEDDING_DIM;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expected {expected} input features, found {found}")]
    InputDimension { expected: usize, found: usize },
    #[error("layer dimensions do not chain: {0}")]
    Chain(String),
    #[error("model has no layers")]
    NoLayers,
    #[error("non-finite value in model parameters or input")]
    NonFinite,
    #[error("weight file format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training split contains a single class")]
    SingleClass,
    #[error("training split has no example of class {0}")]
    MissingClass(usize),
    #[error("split ({train} train, {val} val) is invalid for {available} examples")]
    Split { train: usize, val: usize, available: usize },
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
}

//! Stage 1 knowledge injection, Stage 2 task training, backbone pre-fitting
//! and the Stage-2 grid search.

mod grid;
mod pretrain;
mod stage1;
mod stage2;

#[cfg(test)]
mod tests;

pub use grid::{grid_search, GridPoint, GridResult, DEFAULT_BATCH_SIZES, DEFAULT_LEARNING_RATES};
pub use pretrain::{mask_fill_accuracy, pretrain, single_mask_clozes, PretrainConfig};
pub use stage1::{
    stage1_loss, stage1_step, stage1_train, steps_per_epoch, DomainItem, EpochMeans, LossCurve, LossRecord,
    Stage1Config, Stage1Loss, Stage1Report,
};
pub use stage2::{
    golds, predict, stage2_loss, stage2_step, stage2_train, transplant_adapter, LabelSpace, Stage2Config, Stage2Report,
    Target, TaskExample,
};

use crate::data::DataError;
use crate::eval::EvalError;
use crate::model::ModelError;
use crate::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("label {label:?} is not one of the task's classes ({known})")]
    UnknownLabel { label: String, known: String },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Derives an independent stream seed from a base seed and two indices.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

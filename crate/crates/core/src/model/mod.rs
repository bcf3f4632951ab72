//! Pre-norm transformer encoder with parallel domain adapters, a
//! mixture-of-adapters gate, task adapters and LM/task heads.

mod config;
mod domain_adapter;
mod encoder;
mod freeze;
pub mod gate;
mod heads;
mod params;
pub mod task_adapter;

pub use config::{Attachment, ModelConfig, TaskKind};
pub use domain_adapter::domain_adapter_forward;
pub use encoder::{EncoderOutput, ForwardOptions, LayerCapture, Model, RoutingMode, TokenBatch};
pub use freeze::{freeze_mask, mask_numel, KnowledgeTarget, Stage};
pub use gate::{moa_gate_forward, GateNetwork};
pub use heads::{lm_head_forward, task_head_forward};
pub use params::{adapter_gate_bias, init_parameters, parameter_shapes, LAYER_NORM_EPS};
pub use task_adapter::{task_adapter_forward, AdapterSite, TaskAdapterStyle};

use crate::registry::UnknownStrategy;
use crate::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error(transparent)]
    Strategy(#[from] UnknownStrategy),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    UnknownToken { id: u32, vocab: usize },
    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("expected {expected} expert outputs, got {got}")]
    ExpertCount { expected: usize, got: usize },
    #[error("routing error: {0}")]
    Routing(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Parameter-name prefix of domain adapter `index` in `layer`.
pub fn domain_adapter_prefix(layer: usize, index: usize) -> String {
    format!("layer.{layer}.domain_adapter.{index}")
}

pub fn is_domain_adapter_param(name: &str) -> bool {
    name.contains(".domain_adapter.")
}

pub fn is_gate_param(name: &str) -> bool {
    name.contains(".gate.")
}

pub fn is_task_adapter_param(name: &str) -> bool {
    name.contains(".task_adapter.")
}

pub fn is_task_head_param(name: &str) -> bool {
    name.starts_with("task_head.")
}

/// Parameters that make up the pre-trained encoder and LM head.
pub fn is_backbone_param(name: &str) -> bool {
    !(is_domain_adapter_param(name) || is_gate_param(name) || is_task_adapter_param(name) || is_task_head_param(name))
}

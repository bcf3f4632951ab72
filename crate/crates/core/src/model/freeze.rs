use super::{
    is_domain_adapter_param, is_gate_param, is_task_adapter_param, is_task_head_param, parameter_shapes, ModelConfig,
    ModelError, Result, TaskKind,
};
use std::collections::{BTreeMap, BTreeSet};

/// Which modules absorb the knowledge loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KnowledgeTarget {
    DomainAdapter(usize),
    /// Task adapters stand in for domain adapters (the no-domain-adapter ablation).
    TaskAdapters,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Every parameter; used to pre-fit the backbone.
    Pretrain,
    /// Stage 1: knowledge injection.
    Knowledge(KnowledgeTarget),
    /// Stage 2: gate, task adapters and task head.
    Task,
}

/// Names of the parameters trained in `stage`.
pub fn freeze_mask(stage: Stage, cfg: &ModelConfig) -> Result<BTreeSet<String>> {
    let shapes = parameter_shapes(cfg)?;
    let names = shapes.keys();
    let mask: BTreeSet<String> = match stage {
        Stage::Pretrain => names
            .filter(|n| {
                !(is_domain_adapter_param(n) || is_gate_param(n) || is_task_adapter_param(n) || is_task_head_param(n))
            })
            .cloned()
            .collect(),
        Stage::Knowledge(KnowledgeTarget::DomainAdapter(i)) => {
            if i >= cfg.num_domain_adapters {
                return Err(ModelError::Config(format!(
                    "domain adapter {i} does not exist ({} configured)",
                    cfg.num_domain_adapters
                )));
            }
            let tag = format!(".domain_adapter.{i}.");
            names.filter(|n| n.contains(&tag)).cloned().collect()
        }
        Stage::Knowledge(KnowledgeTarget::TaskAdapters) => {
            if !cfg.has_task_adapters() {
                return Err(ModelError::Config(
                    "knowledge training into task adapters needs a task-adapter style".into(),
                ));
            }
            names.filter(|n| is_task_adapter_param(n)).cloned().collect()
        }
        Stage::Task => {
            if !cfg.has_task_adapters() && !cfg.has_gate() {
                return Err(ModelError::Config(
                    "stage 2 needs a task adapter or a mixture-of-adapters gate".into(),
                ));
            }
            if cfg.task == TaskKind::None {
                return Err(ModelError::Config("stage 2 needs a task head".into()));
            }
            names
                .filter(|n| is_task_adapter_param(n) || is_gate_param(n) || is_task_head_param(n))
                .cloned()
                .collect()
        }
    };
    Ok(mask)
}

/// Number of scalar parameters named in `mask`.
pub fn mask_numel(mask: &BTreeSet<String>, shapes: &BTreeMap<String, Vec<usize>>) -> usize {
    mask.iter()
        .filter_map(|n| shapes.get(n))
        .map(|s| s.iter().product::<usize>())
        .sum()
}

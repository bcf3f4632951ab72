use super::{domain_adapter_prefix, gate, task_adapter, ModelConfig, Result};
use crate::tensor::{Array, ParameterStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Bound of the uniform embedding initialization.
const EMBED_INIT: f64 = 0.5;

fn linear(out: &mut BTreeMap<String, Vec<usize>>, prefix: &str, fan_in: usize, fan_out: usize) {
    out.insert(format!("{prefix}.weight"), vec![fan_in, fan_out]);
    out.insert(format!("{prefix}.bias"), vec![fan_out]);
}

fn norm(out: &mut BTreeMap<String, Vec<usize>>, prefix: &str, d: usize) {
    out.insert(format!("{prefix}.gain"), vec![d]);
    out.insert(format!("{prefix}.bias"), vec![d]);
}

/// Name and shape of every parameter `cfg` describes, without allocating.
pub fn parameter_shapes(cfg: &ModelConfig) -> Result<BTreeMap<String, Vec<usize>>> {
    let d = cfg.hidden_dim;
    let mut out = BTreeMap::new();
    out.insert("embed.token.weight".to_string(), vec![cfg.vocab_size, d]);
    out.insert("embed.position.weight".to_string(), vec![cfg.max_seq_len, d]);
    let task_style = if cfg.has_task_adapters() {
        Some(task_adapter::styles().get(&cfg.task_adapter_style)?)
    } else {
        None
    };
    let gate_net = if cfg.has_gate() {
        Some(gate::styles().get(&cfg.gate_style)?)
    } else {
        None
    };
    for l in 0..cfg.num_layers {
        norm(&mut out, &format!("layer.{l}.attn_norm"), d);
        for proj in ["query", "key", "value", "output"] {
            linear(&mut out, &format!("layer.{l}.attn.{proj}"), d, d);
        }
        norm(&mut out, &format!("layer.{l}.ffn_norm"), d);
        linear(&mut out, &format!("layer.{l}.ffn.inner"), d, cfg.ffn_dim);
        linear(&mut out, &format!("layer.{l}.ffn.outer"), cfg.ffn_dim, d);
        if cfg.is_adapter_layer(l) {
            for i in 0..cfg.num_domain_adapters {
                let p = domain_adapter_prefix(l, i);
                linear(
                    &mut out,
                    &format!("{p}.down"),
                    cfg.adapter_input_dim(),
                    cfg.adapter_bottleneck(),
                );
                linear(&mut out, &format!("{p}.up"), cfg.adapter_bottleneck(), d);
            }
            if let Some(g) = &gate_net {
                for (name, shape) in g.param_shapes(cfg.gate_input_dim(), cfg.gate_hidden(), cfg.num_experts()) {
                    out.insert(format!("layer.{l}.gate.{name}"), shape);
                }
            }
        }
        if let Some(style) = &task_style {
            for site in style.sites() {
                let p = format!("layer.{l}.task_adapter.{}", site.as_str());
                linear(&mut out, &format!("{p}.down"), d, cfg.task_adapter_bottleneck());
                linear(&mut out, &format!("{p}.up"), cfg.task_adapter_bottleneck(), d);
            }
        }
    }
    norm(&mut out, "final_norm", d);
    out.insert("lm_head.bias".into(), vec![cfg.vocab_size]);
    if !cfg.tie_lm_head {
        out.insert("lm_head.weight".into(), vec![d, cfg.vocab_size]);
    }
    let outputs = cfg.task.outputs();
    if outputs > 0 {
        linear(&mut out, "task_head", d, outputs);
    }
    Ok(out)
}

fn name_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

fn init_one(seed: u64, name: &str, shape: &[usize]) -> Array {
    let zero_init = name.ends_with(".bias")
        || name == "task_head.weight"
        || ((name.contains(".domain_adapter.") || name.contains(".task_adapter.") || name.contains(".gate."))
            && name.ends_with(".up.weight"))
        || name.ends_with(".gate.proj.weight");
    if name.ends_with(".gain") {
        return Array::filled(shape, 1.0);
    }
    if zero_init {
        return Array::zeros(shape);
    }
    let mut rng = name_rng(seed, name);
    if name.starts_with("embed.") {
        return Array::uniform(shape, EMBED_INIT, &mut rng);
    }
    let fan_in = shape[0].max(1);
    Array::uniform(shape, 1.0 / (fan_in as f64).sqrt(), &mut rng)
}

/// Initial gate logit of each of `adapters` adapter experts:
/// `logit(sigmoid(bias) / adapters)`.
pub fn adapter_gate_bias(bias: f64, adapters: usize) -> f64 {
    if adapters <= 1 {
        return bias;
    }
    let p = 1.0 / (1.0 + (-bias).exp()) / adapters as f64;
    (p / (1.0 - p)).ln()
}

/// Allocates and initializes every parameter of `cfg`.
///
/// Each tensor draws from its own stream keyed by `(seed, name)`, so adding
/// or removing modules never perturbs the values of the others.
pub fn init_parameters(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore> {
    cfg.validate()?;
    let mut store = ParameterStore::new();
    for (name, shape) in parameter_shapes(cfg)? {
        let mut value = init_one(seed, &name, &shape);
        if name.ends_with(".gate.proj.bias") {
            // Adapters first, FFN last. The adapters share the opening weight
            // sigmoid(gate_bias_init) evenly so adding experts does not scale
            // up the initial adapter contribution.
            let e = cfg.num_experts();
            let adapter = adapter_gate_bias(cfg.gate_bias_init, e - 1);
            for (i, v) in value.data_mut().iter_mut().enumerate() {
                *v = if i + 1 == e { -cfg.gate_bias_init } else { adapter };
            }
        }
        store.insert(name, value)?;
    }
    Ok(store)
}

//! Mixture-of-adapters gate: per-token sigmoid weights over experts.
//!
//! Gate networks map the gate input `q` to one logit per expert. Weights are
//! independent sigmoids and are not normalized across experts.

use super::{ModelError, Result};
use crate::registry::Registry;
use crate::tensor::{ParameterStore, Tape, Tensor};
use std::sync::{Arc, LazyLock};

pub trait GateNetwork: Send + Sync {
    fn name(&self) -> &'static str;

    /// Parameter names (relative to the gate prefix) and shapes.
    fn param_shapes(&self, input_dim: usize, hidden_dim: usize, experts: usize) -> Vec<(String, Vec<usize>)>;

    /// Per-token expert logits `[tokens, experts]`.
    fn logits(&self, tape: &mut Tape, store: &ParameterStore, prefix: &str, q: Tensor) -> Result<Tensor>;
}

/// `h = W_u relu(W_d q)`.
pub struct MlpGate;

impl GateNetwork for MlpGate {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn param_shapes(&self, input_dim: usize, hidden_dim: usize, experts: usize) -> Vec<(String, Vec<usize>)> {
        vec![
            ("down.weight".into(), vec![input_dim, hidden_dim]),
            ("up.weight".into(), vec![hidden_dim, experts]),
        ]
    }

    fn logits(&self, tape: &mut Tape, store: &ParameterStore, prefix: &str, q: Tensor) -> Result<Tensor> {
        let wd = tape.param(store, &format!("{prefix}.down.weight"))?;
        let wu = tape.param(store, &format!("{prefix}.up.weight"))?;
        let h = tape.linear(q, wd, None)?;
        let h = tape.relu(h);
        Ok(tape.linear(h, wu, None)?)
    }
}

/// `h = W q`, a single projection to the expert count.
pub struct LinearGate;

impl GateNetwork for LinearGate {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn param_shapes(&self, input_dim: usize, _hidden_dim: usize, experts: usize) -> Vec<(String, Vec<usize>)> {
        vec![("proj.weight".into(), vec![input_dim, experts])]
    }

    fn logits(&self, tape: &mut Tape, store: &ParameterStore, prefix: &str, q: Tensor) -> Result<Tensor> {
        let w = tape.param(store, &format!("{prefix}.proj.weight"))?;
        Ok(tape.linear(q, w, None)?)
    }
}

/// `h = W q + b`; the bias lets the gate learn an input-independent
/// preference between experts.
pub struct AffineGate;

impl GateNetwork for AffineGate {
    fn name(&self) -> &'static str {
        "affine"
    }

    fn param_shapes(&self, input_dim: usize, _hidden_dim: usize, experts: usize) -> Vec<(String, Vec<usize>)> {
        vec![
            ("proj.weight".into(), vec![input_dim, experts]),
            ("proj.bias".into(), vec![experts]),
        ]
    }

    fn logits(&self, tape: &mut Tape, store: &ParameterStore, prefix: &str, q: Tensor) -> Result<Tensor> {
        let w = tape.param(store, &format!("{prefix}.proj.weight"))?;
        let b = tape.param(store, &format!("{prefix}.proj.bias"))?;
        Ok(tape.linear(q, w, Some(b))?)
    }
}

static GATES: LazyLock<Registry<dyn GateNetwork>> = LazyLock::new(|| {
    let mut r: Registry<dyn GateNetwork> = Registry::new("gate style");
    r.register("mlp", Arc::new(MlpGate));
    r.register("linear", Arc::new(LinearGate));
    r.register("affine", Arc::new(AffineGate));
    r
});

pub fn styles() -> &'static Registry<dyn GateNetwork> {
    &GATES
}

/// Runs the gate on `q` and mixes `experts` (adapters first, FFN last).
/// Returns the mixed output `[tokens, d]` and the weights `[tokens, E]`.
pub fn moa_gate_forward(
    tape: &mut Tape,
    store: &ParameterStore,
    net: &dyn GateNetwork,
    prefix: &str,
    q: Tensor,
    experts: &[Tensor],
) -> Result<(Tensor, Tensor)> {
    let logits = net.logits(tape, store, prefix, q)?;
    let width = tape.shape(logits)[1];
    if width != experts.len() {
        return Err(ModelError::ExpertCount {
            expected: width,
            got: experts.len(),
        });
    }
    let weights = tape.sigmoid(logits);
    let out = tape.weighted_sum(weights, experts)?;
    Ok((out, weights))
}

use super::gate::{self, moa_gate_forward, GateNetwork};
use super::task_adapter::{self, task_adapter_forward, AdapterSite, TaskAdapterStyle};
use super::{
    domain_adapter_forward, domain_adapter_prefix, init_parameters, Attachment, ModelConfig, ModelError, Result,
    LAYER_NORM_EPS,
};
use crate::tensor::{Array, ParameterStore, Tape, Tensor};
use rand::RngCore;
use std::sync::Arc;

/// Padded grid of token ids, `batch x seq` in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<u32>,
    /// False at padding positions.
    pub attention_mask: Vec<bool>,
    pub batch: usize,
    pub seq: usize,
}

impl TokenBatch {
    /// Right-pads `sequences` with `pad_id` to the longest length.
    pub fn from_sequences(sequences: &[Vec<u32>], pad_id: u32) -> Self {
        let seq = sequences.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(sequences.len() * seq);
        let mut attention_mask = Vec::with_capacity(sequences.len() * seq);
        for s in sequences {
            ids.extend_from_slice(s);
            attention_mask.extend(std::iter::repeat_n(true, s.len()));
            ids.extend(std::iter::repeat_n(pad_id, seq - s.len()));
            attention_mask.extend(std::iter::repeat_n(false, seq - s.len()));
        }
        Self {
            ids,
            attention_mask,
            batch: sequences.len(),
            seq,
        }
    }

    /// Flat row indices of non-padding positions.
    pub fn real_rows(&self) -> Vec<usize> {
        (0..self.ids.len()).filter(|&i| self.attention_mask[i]).collect()
    }

    /// Flat row index of each sequence's first token.
    pub fn first_token_rows(&self) -> Vec<usize> {
        (0..self.batch).map(|b| b * self.seq).collect()
    }
}

/// How the FFN sublayer output is composed with domain-adapter outputs in
/// adapter layers.
#[derive(Clone, Debug, PartialEq)]
pub enum RoutingMode {
    /// FFN only.
    Vanilla,
    /// Domain adapter `i` replaces the FFN.
    AdapterOnly(usize),
    /// Mixture-of-adapters gate.
    Gated,
    /// Fixed per-expert weights (adapters in order, FFN last).
    Forced(Vec<f64>),
}

/// FFN and domain-adapter outputs of one adapter layer, `[B*T, d]` each.
/// `ffn_out` is detached from the graph.
#[derive(Clone, Debug)]
pub struct LayerCapture {
    pub layer: usize,
    pub ffn_out: Tensor,
    pub adapter_outs: Vec<Tensor>,
}

#[derive(Default)]
pub struct ForwardOptions<'a> {
    /// Evaluate every domain adapter in adapter layers and record captures.
    pub capture: bool,
    /// Dropout source; `None` runs deterministically without dropout.
    pub rng: Option<&'a mut dyn RngCore>,
}

impl<'a> ForwardOptions<'a> {
    pub fn eval() -> Self {
        Self::default()
    }

    pub fn capture() -> Self {
        Self {
            capture: true,
            rng: None,
        }
    }

    pub fn train(rng: &'a mut dyn RngCore) -> Self {
        Self {
            capture: false,
            rng: Some(rng),
        }
    }
}

#[derive(Debug)]
pub struct EncoderOutput {
    /// Final-norm hidden states `[B, T, d]`.
    pub hidden: Tensor,
    pub captures: Vec<LayerCapture>,
    /// Per adapter layer, the `[B*T, E]` expert weights when gated or forced.
    pub gate_weights: Vec<(usize, Tensor)>,
}

/// A configured encoder with its strategies resolved from the registries.
#[derive(Clone)]
pub struct Model {
    cfg: ModelConfig,
    task_style: Option<Arc<dyn TaskAdapterStyle>>,
    gate: Option<Arc<dyn GateNetwork>>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("cfg", &self.cfg).finish()
    }
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let task_style = if cfg.has_task_adapters() {
            Some(task_adapter::styles().get(&cfg.task_adapter_style)?)
        } else {
            None
        };
        let gate = if cfg.has_gate() {
            Some(gate::styles().get(&cfg.gate_style)?)
        } else {
            None
        };
        Ok(Self { cfg, task_style, gate })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn init(&self, seed: u64) -> Result<ParameterStore> {
        init_parameters(&self.cfg, seed)
    }

    pub fn validate_mode(&self, mode: &RoutingMode) -> Result<()> {
        let n = self.cfg.num_domain_adapters;
        match mode {
            RoutingMode::Vanilla => Ok(()),
            RoutingMode::AdapterOnly(i) if *i >= n => Err(ModelError::Routing(format!(
                "adapter index {i} out of range for {n} domain adapters"
            ))),
            RoutingMode::AdapterOnly(_) => Ok(()),
            RoutingMode::Gated if self.gate.is_none() || n == 0 => Err(ModelError::Config(
                "gated routing requires a gate and at least one domain adapter".into(),
            )),
            RoutingMode::Gated => Ok(()),
            RoutingMode::Forced(w) if w.len() != self.cfg.num_experts() => Err(ModelError::ExpertCount {
                expected: self.cfg.num_experts(),
                got: w.len(),
            }),
            RoutingMode::Forced(_) => Ok(()),
        }
    }

    fn check_tokens(&self, batch: &TokenBatch) -> Result<()> {
        if batch.seq > self.cfg.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: batch.seq,
                max: self.cfg.max_seq_len,
            });
        }
        if let Some(&id) = batch.ids.iter().find(|&&id| id as usize >= self.cfg.vocab_size) {
            return Err(ModelError::UnknownToken {
                id,
                vocab: self.cfg.vocab_size,
            });
        }
        Ok(())
    }

    fn linear(&self, tape: &mut Tape, store: &ParameterStore, prefix: &str, x: Tensor) -> Result<Tensor> {
        let w = tape.param(store, &format!("{prefix}.weight"))?;
        let b = tape.param(store, &format!("{prefix}.bias"))?;
        Ok(tape.linear(x, w, Some(b))?)
    }

    fn norm(&self, tape: &mut Tape, store: &ParameterStore, prefix: &str, x: Tensor) -> Result<Tensor> {
        let g = tape.param(store, &format!("{prefix}.gain"))?;
        let b = tape.param(store, &format!("{prefix}.bias"))?;
        Ok(tape.layer_norm(x, g, b, LAYER_NORM_EPS)?)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        batch: &TokenBatch,
        mode: &RoutingMode,
        mut opts: ForwardOptions<'_>,
    ) -> Result<EncoderOutput> {
        self.validate_mode(mode)?;
        self.check_tokens(batch)?;
        let cfg = &self.cfg;
        let (b, t) = (batch.batch, batch.seq);
        let rows = b * t;

        let tok = tape.param(store, "embed.token.weight")?;
        let pos = tape.param(store, "embed.position.weight")?;
        let ids: Vec<usize> = batch.ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let x_tok = tape.gather_rows(tok, &ids)?;
        let x_pos = tape.gather_rows(pos, &positions)?;
        let mut x = tape.add(x_tok, x_pos)?;

        let mut captures = Vec::new();
        let mut gate_weights = Vec::new();
        let p = cfg.dropout;

        for l in 0..cfg.num_layers {
            let a = self.norm(tape, store, &format!("layer.{l}.attn_norm"), x)?;
            let qh = self.linear(tape, store, &format!("layer.{l}.attn.query"), a)?;
            let kh = self.linear(tape, store, &format!("layer.{l}.attn.key"), a)?;
            let vh = self.linear(tape, store, &format!("layer.{l}.attn.value"), a)?;
            let att = tape.attention(qh, kh, vh, &batch.attention_mask, b, t, cfg.num_heads)?;
            let mut att = self.linear(tape, store, &format!("layer.{l}.attn.output"), att)?;
            if let Some(style) = &self.task_style {
                att = task_adapter_forward(tape, store, style.as_ref(), l, AdapterSite::Attention, att)?;
            }
            if let Some(rng) = opts.rng.as_deref_mut() {
                att = tape.dropout(att, p, rng);
            }
            x = tape.add(x, att)?;

            let q = self.norm(tape, store, &format!("layer.{l}.ffn_norm"), x)?;
            let inner = self.linear(tape, store, &format!("layer.{l}.ffn.inner"), q)?;
            let inner = tape.gelu(inner);
            let ffn_out = self.linear(tape, store, &format!("layer.{l}.ffn.outer"), inner)?;

            let mut composed = ffn_out;
            if cfg.is_adapter_layer(l) && cfg.num_domain_adapters > 0 {
                let adapter_in = match cfg.attachment {
                    Attachment::FfnIntermediate => inner,
                    Attachment::SublayerInput => q,
                };
                let gate_in = match cfg.gate_input {
                    Attachment::FfnIntermediate => inner,
                    Attachment::SublayerInput => q,
                };
                let wanted = |i: usize| -> bool {
                    opts.capture
                        || match mode {
                            RoutingMode::Vanilla => false,
                            RoutingMode::AdapterOnly(j) => *j == i,
                            RoutingMode::Gated => true,
                            RoutingMode::Forced(w) => w[i] != 0.0,
                        }
                };
                let mut adapter_outs: Vec<Option<Tensor>> = Vec::with_capacity(cfg.num_domain_adapters);
                for i in 0..cfg.num_domain_adapters {
                    adapter_outs.push(if wanted(i) {
                        Some(domain_adapter_forward(
                            tape,
                            store,
                            &domain_adapter_prefix(l, i),
                            adapter_in,
                        )?)
                    } else {
                        None
                    });
                }
                composed = match mode {
                    RoutingMode::Vanilla => ffn_out,
                    RoutingMode::AdapterOnly(i) => adapter_outs[*i].expect("evaluated"),
                    RoutingMode::Gated => {
                        let mut experts: Vec<Tensor> = adapter_outs.iter().map(|o| o.expect("evaluated")).collect();
                        experts.push(ffn_out);
                        let net = self.gate.as_ref().expect("validated");
                        let (o, w) =
                            moa_gate_forward(tape, store, net.as_ref(), &format!("layer.{l}.gate"), gate_in, &experts)?;
                        gate_weights.push((l, w));
                        o
                    }
                    RoutingMode::Forced(w) => {
                        let e = w.len();
                        let weights = tape.constant(Array::new(
                            vec![rows, e],
                            (0..rows).flat_map(|_| w.iter().copied()).collect(),
                        )?);
                        gate_weights.push((l, weights));
                        // experts with weight exactly zero contribute nothing
                        let mut active_w = Vec::new();
                        let mut active = Vec::new();
                        for (i, &wi) in w.iter().enumerate() {
                            if wi == 0.0 {
                                continue;
                            }
                            active_w.push(wi);
                            active.push(if i + 1 == e {
                                ffn_out
                            } else {
                                adapter_outs[i].expect("evaluated")
                            });
                        }
                        if active.is_empty() {
                            tape.constant(Array::zeros(&[rows, cfg.hidden_dim]))
                        } else {
                            let k = active.len();
                            let aw = tape.constant(Array::new(
                                vec![rows, k],
                                (0..rows).flat_map(|_| active_w.iter().copied()).collect(),
                            )?);
                            tape.weighted_sum(aw, &active)?
                        }
                    }
                };
                if opts.capture {
                    let f = tape.detach(ffn_out);
                    captures.push(LayerCapture {
                        layer: l,
                        ffn_out: f,
                        adapter_outs: adapter_outs.into_iter().map(|o| o.expect("captured")).collect(),
                    });
                }
            }
            if let Some(style) = &self.task_style {
                composed = task_adapter_forward(tape, store, style.as_ref(), l, AdapterSite::Ffn, composed)?;
            }
            if let Some(rng) = opts.rng.as_deref_mut() {
                composed = tape.dropout(composed, p, rng);
            }
            x = tape.add(x, composed)?;
        }
        let h = self.norm(tape, store, "final_norm", x)?;
        let hidden = tape.reshape(h, &[b, t, cfg.hidden_dim])?;
        Ok(EncoderOutput {
            hidden,
            captures,
            gate_weights,
        })
    }
}

use super::{gate, task_adapter, ModelError};

/// Where a domain adapter reads its input from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attachment {
    /// Post-nonlinearity FFN intermediate activations (width `ffn_dim`).
    FfnIntermediate,
    /// The FFN sublayer input (width `hidden_dim`).
    SublayerInput,
}

impl Attachment {
    pub fn as_str(self) -> &'static str {
        match self {
            Attachment::FfnIntermediate => "ffn-intermediate",
            Attachment::SublayerInput => "sublayer-input",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ModelError> {
        match s {
            "ffn-intermediate" => Ok(Attachment::FfnIntermediate),
            "sublayer-input" => Ok(Attachment::SublayerInput),
            other => Err(ModelError::Config(format!("unknown attachment {other:?}"))),
        }
    }
}

/// Head placed on the pooled first-token representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    None,
    Classification { classes: usize },
    Regression,
}

impl TaskKind {
    pub fn outputs(self) -> usize {
        match self {
            TaskKind::None => 0,
            TaskKind::Classification { classes } => classes,
            TaskKind::Regression => 1,
        }
    }

    pub fn describe(self) -> String {
        match self {
            TaskKind::None => "none".into(),
            TaskKind::Classification { classes } => format!("classification:{classes}"),
            TaskKind::Regression => "regression".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self, ModelError> {
        match s {
            "none" => Ok(TaskKind::None),
            "regression" => Ok(TaskKind::Regression),
            _ => {
                let classes = s
                    .strip_prefix("classification:")
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| ModelError::Config(format!("unknown task kind {s:?}")))?;
                Ok(TaskKind::Classification { classes })
            }
        }
    }
}

/// Full architectural description of an encoder with its MixDA modules.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    /// Layers carrying domain adapters, ascending.
    pub adapter_layers: Vec<usize>,
    pub adapter_reduction: usize,
    pub attachment: Attachment,
    pub num_domain_adapters: usize,
    /// Registered task-adapter style, or `"none"`.
    pub task_adapter_style: String,
    pub task_adapter_reduction: usize,
    /// Registered gate style, or `"none"` for no mixture-of-adapters gate.
    pub gate_style: String,
    /// Stream the gate reads; its width is the gate input dimension.
    pub gate_input: Attachment,
    /// `None` picks `max(gate_input_dim / 16, 4)`.
    pub gate_hidden_dim: Option<usize>,
    /// Initial gate bias: `+v` on every adapter logit, `-v` on the FFN's.
    /// Only gate styles with a bias use it.
    pub gate_bias_init: f64,
    pub dropout: f64,
    pub tie_lm_head: bool,
    pub task: TaskKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            hidden_dim: 32,
            ffn_dim: 128,
            num_layers: 4,
            num_heads: 4,
            max_seq_len: 32,
            adapter_layers: vec![2, 3],
            adapter_reduction: 16,
            attachment: Attachment::FfnIntermediate,
            num_domain_adapters: 1,
            task_adapter_style: "none".into(),
            task_adapter_reduction: 4,
            gate_style: "none".into(),
            gate_input: Attachment::SublayerInput,
            gate_hidden_dim: None,
            gate_bias_init: 0.0,
            dropout: 0.1,
            tie_lm_head: true,
            task: TaskKind::None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.vocab_size == 0 || self.hidden_dim == 0 || self.ffn_dim == 0 || self.max_seq_len == 0 {
            return err("vocab_size, hidden_dim, ffn_dim and max_seq_len must be positive".into());
        }
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return err(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if let Some(&l) = self.adapter_layers.iter().find(|&&l| l >= self.num_layers) {
            return err(format!("adapter layer {l} outside [0, {})", self.num_layers));
        }
        if self.adapter_layers.windows(2).any(|w| w[0] >= w[1]) {
            return err("adapter_layers must be strictly ascending".into());
        }
        if self.adapter_reduction == 0 || self.task_adapter_reduction == 0 {
            return err("reductions must be at least 1".into());
        }
        if self.adapter_bottleneck() == 0 {
            return err(format!(
                "adapter input width {} smaller than reduction {}",
                self.adapter_input_dim(),
                self.adapter_reduction
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.task_adapter_style != "none" {
            task_adapter::styles().get(&self.task_adapter_style)?;
        }
        if self.has_gate() {
            gate::styles().get(&self.gate_style)?;
            if self.num_domain_adapters == 0 || self.adapter_layers.is_empty() {
                return err("a mixture-of-adapters gate needs at least one domain adapter".into());
            }
        }
        if !self.gate_bias_init.is_finite() {
            return err(format!("gate_bias_init {} is not finite", self.gate_bias_init));
        }
        if let TaskKind::Classification { classes } = self.task {
            if classes < 2 {
                return err(format!("classification needs at least 2 classes, got {classes}"));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn adapter_input_dim(&self) -> usize {
        match self.attachment {
            Attachment::FfnIntermediate => self.ffn_dim,
            Attachment::SublayerInput => self.hidden_dim,
        }
    }

    pub fn adapter_bottleneck(&self) -> usize {
        self.adapter_input_dim() / self.adapter_reduction
    }

    pub fn task_adapter_bottleneck(&self) -> usize {
        (self.hidden_dim / self.task_adapter_reduction).max(1)
    }

    pub fn has_gate(&self) -> bool {
        self.gate_style != "none"
    }

    pub fn has_task_adapters(&self) -> bool {
        self.task_adapter_style != "none"
    }

    /// Experts seen by the gate: every domain adapter plus the FFN.
    pub fn num_experts(&self) -> usize {
        self.num_domain_adapters + 1
    }

    pub fn gate_input_dim(&self) -> usize {
        match self.gate_input {
            Attachment::FfnIntermediate => self.ffn_dim,
            Attachment::SublayerInput => self.hidden_dim,
        }
    }

    pub fn gate_hidden(&self) -> usize {
        self.gate_hidden_dim
            .unwrap_or_else(|| (self.gate_input_dim() / 16).max(4))
    }

    pub fn is_adapter_layer(&self, layer: usize) -> bool {
        self.adapter_layers.binary_search(&layer).is_ok()
    }

    /// Key-ordered `key = value` lines describing this configuration.
    pub fn to_canonical_lines(&self) -> Vec<(String, String)> {
        let layers = self
            .adapter_layers
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("adapter_layers".into(), layers),
            ("adapter_reduction".into(), self.adapter_reduction.to_string()),
            ("attachment".into(), self.attachment.as_str().into()),
            ("dropout".into(), format!("{:?}", self.dropout)),
            ("ffn_dim".into(), self.ffn_dim.to_string()),
            (
                "gate_hidden_dim".into(),
                self.gate_hidden_dim.map_or("auto".into(), |h| h.to_string()),
            ),
            ("gate_bias_init".into(), format!("{:?}", self.gate_bias_init)),
            ("gate_input".into(), self.gate_input.as_str().into()),
            ("gate_style".into(), self.gate_style.clone()),
            ("hidden_dim".into(), self.hidden_dim.to_string()),
            ("max_seq_len".into(), self.max_seq_len.to_string()),
            ("num_domain_adapters".into(), self.num_domain_adapters.to_string()),
            ("num_heads".into(), self.num_heads.to_string()),
            ("num_layers".into(), self.num_layers.to_string()),
            ("task".into(), self.task.describe()),
            ("task_adapter_reduction".into(), self.task_adapter_reduction.to_string()),
            ("task_adapter_style".into(), self.task_adapter_style.clone()),
            ("tie_lm_head".into(), self.tie_lm_head.to_string()),
            ("vocab_size".into(), self.vocab_size.to_string()),
        ]
    }

    /// Applies one `key = value` setting; the inverse of
    /// [`ModelConfig::to_canonical_lines`].
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ModelError> {
            v.trim()
                .parse()
                .map_err(|_| ModelError::Config(format!("invalid value {v:?} for {key}")))
        }
        match key {
            "vocab_size" => self.vocab_size = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "ffn_dim" => self.ffn_dim = num(key, value)?,
            "num_layers" => self.num_layers = num(key, value)?,
            "num_heads" => self.num_heads = num(key, value)?,
            "max_seq_len" => self.max_seq_len = num(key, value)?,
            "adapter_layers" => {
                self.adapter_layers = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_, _>>()?;
            }
            "adapter_reduction" => self.adapter_reduction = num(key, value)?,
            "attachment" => self.attachment = Attachment::parse(value)?,
            "num_domain_adapters" => self.num_domain_adapters = num(key, value)?,
            "task_adapter_style" => self.task_adapter_style = value.to_string(),
            "task_adapter_reduction" => self.task_adapter_reduction = num(key, value)?,
            "gate_style" => self.gate_style = value.to_string(),
            "gate_input" => self.gate_input = Attachment::parse(value)?,
            "gate_hidden_dim" => self.gate_hidden_dim = if value == "auto" { None } else { Some(num(key, value)?) },
            "gate_bias_init" => self.gate_bias_init = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "tie_lm_head" => self.tie_lm_head = num(key, value)?,
            "task" => self.task = TaskKind::parse(value)?,
            other => return Err(ModelError::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}

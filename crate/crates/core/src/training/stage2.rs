use super::{derive_seed, Result, TrainError};
use crate::data::{LabeledExample, Vocab, PAD};
use crate::eval::{Metric, Predictions};
use crate::model::{
    domain_adapter_prefix, freeze_mask, is_gate_param, task_head_forward, ForwardOptions, Model, ModelError,
    RoutingMode, Stage, TaskKind, TokenBatch,
};
use crate::tensor::{lr_at, AdamW, OptimizerState, ParameterStore, ScheduleConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskExample {
    pub ids: Vec<u32>,
    pub target: Target,
}

/// Maps label strings to targets. Class indices follow sorted label order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelSpace {
    Classes(Vec<String>),
    Regression,
}

impl LabelSpace {
    pub fn classification<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v: Vec<String> = labels.into_iter().map(str::to_string).collect();
        v.sort();
        v.dedup();
        LabelSpace::Classes(v)
    }

    pub fn task_kind(&self) -> TaskKind {
        match self {
            LabelSpace::Classes(c) => TaskKind::Classification { classes: c.len() },
            LabelSpace::Regression => TaskKind::Regression,
        }
    }

    pub fn target(&self, label: &str) -> Result<Target> {
        match self {
            LabelSpace::Classes(c) => c
                .binary_search_by(|x| x.as_str().cmp(label))
                .map(Target::Class)
                .map_err(|_| TrainError::UnknownLabel {
                    label: label.to_string(),
                    known: c.join(", "),
                }),
            LabelSpace::Regression => {
                label
                    .trim()
                    .parse::<f64>()
                    .map(Target::Value)
                    .map_err(|_| TrainError::UnknownLabel {
                        label: label.to_string(),
                        known: "a decimal number".into(),
                    })
            }
        }
    }

    pub fn encode(&self, examples: &[LabeledExample], vocab: &Vocab, max_len: usize) -> Result<Vec<TaskExample>> {
        examples
            .iter()
            .map(|ex| {
                let ids = match &ex.text2 {
                    Some(b) => vocab.encode_pair(&ex.text, b, max_len),
                    None => vocab.encode(&ex.text, max_len),
                };
                Ok(TaskExample {
                    ids,
                    target: self.target(&ex.label)?,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Config {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub routing: RoutingMode,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            epochs: 20,
            warmup_epochs: 2,
            weight_decay: 0.05,
            routing: RoutingMode::Gated,
            seed: 0,
        }
    }
}

fn batch_of(examples: &[&TaskExample]) -> TokenBatch {
    let seqs: Vec<Vec<u32>> = examples.iter().map(|e| e.ids.clone()).collect();
    TokenBatch::from_sequences(&seqs, PAD)
}

/// Cross-entropy (classification) or mean squared error (regression) of the
/// task head on `examples`.
pub fn stage2_loss(
    tape: &mut Tape,
    model: &Model,
    store: &ParameterStore,
    examples: &[&TaskExample],
    routing: &RoutingMode,
    rng: Option<&mut dyn RngCore>,
) -> Result<Tensor> {
    if examples.is_empty() {
        return Err(TrainError::Empty("task batch"));
    }
    let batch = batch_of(examples);
    let opts = ForwardOptions { capture: false, rng };
    let out = model.forward(tape, store, &batch, routing, opts)?;
    let y = task_head_forward(tape, store, model.config(), out.hidden)?;
    match model.config().task {
        TaskKind::Classification { .. } => {
            let labels = examples
                .iter()
                .map(|e| match e.target {
                    Target::Class(c) => Ok(c as i64),
                    Target::Value(_) => Err(TrainError::Config("regression target on a classification task".into())),
                })
                .collect::<Result<Vec<i64>>>()?;
            Ok(tape.masked_cross_entropy(y, &labels)?.0)
        }
        TaskKind::Regression => {
            let targets = examples
                .iter()
                .map(|e| match e.target {
                    Target::Value(v) => Ok(v),
                    Target::Class(_) => Err(TrainError::Config("class target on a regression task".into())),
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(tape.mse(y, &targets)?)
        }
        TaskKind::None => Err(ModelError::Config("model has no task head".into()).into()),
    }
}

pub fn stage2_step(
    model: &Model,
    store: &mut ParameterStore,
    opt: &mut OptimizerState,
    examples: &[&TaskExample],
    routing: &RoutingMode,
    lr_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = stage2_loss(&mut tape, model, store, examples, routing, Some(rng))?;
    tape.backward(loss)?;
    tape.write_grads(store)?;
    opt.step(store, lr_scale)?;
    Ok(tape.scalar_value(loss))
}

/// Example-weighted mean task loss without dropout.
pub fn mean_loss(
    model: &Model,
    store: &ParameterStore,
    examples: &[TaskExample],
    routing: &RoutingMode,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in examples.chunks(32) {
        let refs: Vec<&TaskExample> = chunk.iter().collect();
        let mut tape = Tape::new();
        let loss = stage2_loss(&mut tape, model, store, &refs, routing, None)?;
        total += tape.scalar_value(loss) * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// Deterministic inference without dropout; class predictions break ties
/// toward the lower index.
pub fn predict(
    model: &Model,
    store: &ParameterStore,
    examples: &[TaskExample],
    routing: &RoutingMode,
) -> Result<Predictions> {
    let mut classes = Vec::new();
    let mut values = Vec::new();
    for chunk in examples.chunks(32) {
        let refs: Vec<&TaskExample> = chunk.iter().collect();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, store, &batch_of(&refs), routing, ForwardOptions::eval())?;
        let y = task_head_forward(&mut tape, store, model.config(), out.hidden)?;
        let v = tape.value(y);
        match model.config().task {
            TaskKind::Regression => values.extend_from_slice(v.data()),
            _ => {
                for r in 0..v.rows() {
                    let row = v.row(r);
                    classes.push((0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b }));
                }
            }
        }
    }
    Ok(match model.config().task {
        TaskKind::Regression => Predictions::Values(values),
        _ => Predictions::Classes(classes),
    })
}

pub fn golds(examples: &[TaskExample]) -> Predictions {
    match examples.first().map(|e| e.target) {
        Some(Target::Value(_)) => Predictions::Values(
            examples
                .iter()
                .map(|e| match e.target {
                    Target::Value(v) => v,
                    Target::Class(c) => c as f64,
                })
                .collect(),
        ),
        _ => Predictions::Classes(
            examples
                .iter()
                .map(|e| match e.target {
                    Target::Class(c) => c,
                    Target::Value(v) => v as usize,
                })
                .collect(),
        ),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Report {
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_validation: f64,
    pub validation: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub test: f64,
}

/// Trains the Stage-2 parameters for `cfg.epochs` with linear warmup and
/// decay. After each epoch the validation metric and loss are computed; the
/// store ends up holding the parameters of the epoch with the highest score
/// (equal scores go to the lower validation loss, then the earlier epoch), and
/// the test metric is measured with them.
pub fn stage2_train(
    model: &Model,
    store: &mut ParameterStore,
    train: &[TaskExample],
    validation: &[TaskExample],
    test: &[TaskExample],
    cfg: &Stage2Config,
    metric: &dyn Metric,
) -> Result<Stage2Report> {
    if train.is_empty() {
        return Err(TrainError::Empty("training split"));
    }
    if validation.is_empty() {
        return Err(TrainError::Empty("validation split"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.warmup_epochs > cfg.epochs {
        return Err(TrainError::Config(
            "stage 2 needs batch size >= 1, epochs >= 1 and warmup <= epochs".into(),
        ));
    }
    model.validate_mode(&cfg.routing)?;
    let mut mask = freeze_mask(Stage::Task, model.config())?;
    if !matches!(cfg.routing, RoutingMode::Gated) {
        // The gate only runs under gated routing.
        mask.retain(|n| !is_gate_param(n));
    }
    store.set_trainable(mask.iter().cloned())?;
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let schedule = ScheduleConfig::new(cfg.warmup_epochs * steps_per_epoch, cfg.epochs * steps_per_epoch)?;
    let mut opt = OptimizerState::new(AdamW {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamW::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4, 0));
    let val_golds = golds(validation);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(usize, f64, f64, ParameterStore)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut val_losses = Vec::with_capacity(cfg.epochs);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut n = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&TaskExample> = chunk.iter().map(|&i| &train[i]).collect();
            sum += stage2_step(
                model,
                store,
                &mut opt,
                &refs,
                &cfg.routing,
                lr_at(step, schedule),
                &mut rng,
            )?;
            n += 1;
            step += 1;
        }
        losses.push(sum / n as f64);
        let score = metric.compute(&predict(model, store, validation, &cfg.routing)?, &val_golds)?;
        let vloss = mean_loss(model, store, validation, &cfg.routing)?;
        history.push(score);
        val_losses.push(vloss);
        if best
            .as_ref()
            .is_none_or(|b| score > b.1 || (score == b.1 && vloss < b.2))
        {
            let mut snapshot = ParameterStore::new();
            snapshot.copy_from(store, |n| mask.contains(n));
            best = Some((epoch, score, vloss, snapshot));
        }
    }
    let (best_epoch, best_validation, _, snapshot) = best.expect("at least one epoch");
    store.copy_from(&snapshot, |_| true);
    let test_score = if test.is_empty() {
        f64::NAN
    } else {
        metric.compute(&predict(model, store, test, &cfg.routing)?, &golds(test))?
    };
    Ok(Stage2Report {
        best_epoch,
        best_validation,
        validation: history,
        validation_loss: val_losses,
        train_loss: losses,
        test: test_score,
    })
}

/// Copies domain adapter `from` of `src` into slot `to` of `dst`.
pub fn transplant_adapter(dst: &mut ParameterStore, src: &ParameterStore, from: usize, to: usize) -> Result<usize> {
    let mut copied = 0;
    let tag = format!(".domain_adapter.{from}.");
    for (name, value) in src.iter() {
        let Some(pos) = name.find(&tag) else { continue };
        let layer: usize = name["layer.".len()..pos]
            .parse()
            .map_err(|_| TrainError::Config(format!("malformed adapter parameter name {name:?}")))?;
        let rest = &name[pos + tag.len()..];
        let target = format!("{}.{rest}", domain_adapter_prefix(layer, to));
        let expected = dst
            .value(&target)
            .map_err(|_| TrainError::Config(format!("model has no parameter {target:?} for adapter {to}")))?;
        if expected.shape() != value.shape() {
            return Err(TrainError::Config(format!(
                "adapter tensor {name:?} has shape {:?}, model expects {:?}",
                value.shape(),
                expected.shape()
            )));
        }
        dst.set(target, value.clone());
        copied += 1;
    }
    Ok(copied)
}

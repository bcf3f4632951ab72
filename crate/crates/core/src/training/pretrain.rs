use super::{derive_seed, Result, TrainError};
use crate::data::{cloze_batch, mlm_collate_with, Cloze, MaskingConfig, MlmBatch, MASK, NUM_SPECIAL};
use crate::model::{freeze_mask, lm_head_forward, ForwardOptions, Model, RoutingMode, Stage};
use crate::tensor::{lr_at, AdamW, OptimizerState, ParameterStore, ScheduleConfig, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Full-parameter MLM fitting of the backbone, standing in for a
/// pretrained encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    /// Also train the first position to predict the sequence's first
    /// supervised token, so first-token pooling sees sentence content.
    pub summary_token: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            summary_token: true,
            lr: 1e-3,
            batch_size: 20,
            epochs: 40,
            warmup_epochs: 2,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

/// Returns the mean masked-LM loss of every epoch.
pub fn pretrain(
    model: &Model,
    store: &mut ParameterStore,
    sentences: &[Vec<u32>],
    cfg: &PretrainConfig,
) -> Result<Vec<f64>> {
    if sentences.is_empty() {
        return Err(TrainError::Empty("pretraining corpus"));
    }
    if cfg.batch_size == 0 || cfg.warmup_epochs > cfg.epochs {
        return Err(TrainError::Config(
            "pretraining needs batch size >= 1 and warmup <= epochs".into(),
        ));
    }
    store.set_trainable(freeze_mask(Stage::Pretrain, model.config())?)?;
    let steps_per_epoch = sentences.len().div_ceil(cfg.batch_size);
    let schedule = ScheduleConfig::new(cfg.warmup_epochs * steps_per_epoch, cfg.epochs * steps_per_epoch)?;
    let mut opt = OptimizerState::new(AdamW {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamW::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<Vec<u32>> = chunk.iter().map(|&i| sentences[i].clone()).collect();
            let mut batch = mlm_collate_with(
                &seqs,
                model.config().vocab_size,
                &MaskingConfig::default(),
                derive_seed(cfg.seed, 3, step as u64),
            );
            if cfg.summary_token {
                add_summary_labels(&mut batch);
            }
            let lr_scale = lr_at(step, schedule);
            step += 1;
            if batch.supervised() == 0 {
                continue;
            }
            let mut tape = Tape::new();
            let out = model.forward(
                &mut tape,
                store,
                &batch.tokens,
                &RoutingMode::Vanilla,
                ForwardOptions::train(&mut rng),
            )?;
            let logits = lm_head_forward(&mut tape, store, model.config(), out.hidden)?;
            let (loss, _) = tape.masked_cross_entropy(logits, &batch.labels)?;
            tape.backward(loss)?;
            tape.write_grads(store)?;
            opt.step(store, lr_scale)?;
            sum += tape.scalar_value(loss);
            n += 1;
        }
        losses.push(if n == 0 { 0.0 } else { sum / n as f64 });
    }
    Ok(losses)
}

/// Copies each row's first supervised label onto position 0.
pub(crate) fn add_summary_labels(batch: &mut MlmBatch) {
    let t = batch.tokens.seq;
    for row in batch.labels.chunks_mut(t) {
        if let Some(&first) = row[1..].iter().find(|&&l| l >= 0) {
            row[0] = first;
        }
    }
}

/// One cloze per non-special position of every sequence, masking that
/// position alone.
pub fn single_mask_clozes(sequences: &[Vec<u32>]) -> Vec<Cloze> {
    let mut out = Vec::new();
    for s in sequences {
        for (p, &id) in s.iter().enumerate() {
            if id < NUM_SPECIAL {
                continue;
            }
            let mut ids = s.clone();
            ids[p] = MASK;
            out.push(Cloze {
                ids,
                masked_positions: vec![p],
                answers: vec![id],
            });
        }
    }
    out
}

/// Fraction of masked positions whose arg-max LM prediction equals the answer.
pub fn mask_fill_accuracy(
    model: &Model,
    store: &ParameterStore,
    clozes: &[Cloze],
    mode: &RoutingMode,
    batch_size: usize,
) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for chunk in clozes.chunks(batch_size.max(1)) {
        let batch: MlmBatch = cloze_batch(chunk);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, store, &batch.tokens, mode, ForwardOptions::eval())?;
        let logits = lm_head_forward(&mut tape, store, model.config(), out.hidden)?;
        let lv = tape.value(logits);
        for (r, &label) in batch.labels.iter().enumerate() {
            if label < 0 {
                continue;
            }
            let row = lv.row(r);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            correct += usize::from(best as i64 == label);
            total += 1;
        }
    }
    if total == 0 {
        return Err(TrainError::Empty("mask-fill evaluation set"));
    }
    Ok(correct as f64 / total as f64)
}

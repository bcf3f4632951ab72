use super::pretrain::add_summary_labels;
use super::{derive_seed, Result, TrainError};
use crate::data::{mlm_collate_with, Cloze, MaskStats, MaskingConfig, MlmBatch};
use crate::model::{
    freeze_mask, lm_head_forward, ForwardOptions, KnowledgeTarget, Model, RoutingMode, Stage, TokenBatch,
};
use crate::tensor::{lr_at, AdamW, OptimizerState, ParameterStore, ScheduleConfig, Tape, Tensor, IGNORE_INDEX};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::ops::ControlFlow;

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Config {
    /// Weight of the knowledge loss.
    pub lambda: f64,
    pub lr: f64,
    /// Domain plus general examples per step.
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Fraction of each batch drawn from the domain corpus.
    pub mix_ratio: f64,
    pub target: KnowledgeTarget,
    /// Whether the general half and the sampling loss are used.
    pub sampling_loss: bool,
    /// Also score each domain row's first answer at position 0, matching a
    /// backbone pre-fitted with the summary-token objective.
    pub summary_token: bool,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            lr: 1e-4,
            batch_size: 20,
            weight_decay: 0.05,
            epochs: 10,
            warmup_epochs: 0,
            mix_ratio: 0.5,
            target: KnowledgeTarget::DomainAdapter(0),
            sampling_loss: true,
            summary_token: false,
            seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.mix_ratio > 0.0 && self.mix_ratio < 1.0) {
            return Err(TrainError::Config(format!(
                "mix ratio must lie in (0, 1), got {}",
                self.mix_ratio
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(TrainError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch size must be at least 2".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(TrainError::Config("warmup epochs exceed epochs".into()));
        }
        Ok(())
    }

    /// Examples per step taken from the domain and general corpora.
    pub fn halves(&self) -> (usize, usize) {
        let domain = ((self.batch_size as f64 * self.mix_ratio).round() as usize).clamp(1, self.batch_size - 1);
        if self.sampling_loss {
            (domain, self.batch_size - domain)
        } else {
            (domain, 0)
        }
    }
}

/// A Stage-1 domain example: a cloze built from a triple, or raw text that
/// is masked on the fly.
#[derive(Clone, Debug, PartialEq)]
pub enum DomainItem {
    Cloze(Cloze),
    Text(Vec<u32>),
}

/// Collates domain items: clozes keep their masks, text is MLM-corrupted.
pub fn collate_domain(items: &[&DomainItem], vocab_size: usize, seed: u64) -> MlmBatch {
    let texts: Vec<Vec<u32>> = items
        .iter()
        .filter_map(|it| match it {
            DomainItem::Text(ids) => Some(ids.clone()),
            DomainItem::Cloze(_) => None,
        })
        .collect();
    let masked = mlm_collate_with(&texts, vocab_size, &MaskingConfig::default(), seed);
    let mut rows: Vec<(Vec<u32>, Vec<i64>)> = Vec::with_capacity(items.len());
    let mut stats = masked.stats;
    let mut t = 0;
    for it in items {
        match it {
            DomainItem::Cloze(c) => {
                let mut labels = vec![IGNORE_INDEX; c.ids.len()];
                for (&p, &a) in c.masked_positions.iter().zip(&c.answers) {
                    labels[p] = a as i64;
                }
                stats += MaskStats {
                    selected: c.answers.len(),
                    masked: c.answers.len(),
                    ..MaskStats::default()
                };
                rows.push((c.ids.clone(), labels));
            }
            DomainItem::Text(ids) => {
                let off = t * masked.tokens.seq;
                rows.push((
                    masked.tokens.ids[off..off + ids.len()].to_vec(),
                    masked.labels[off..off + ids.len()].to_vec(),
                ));
                t += 1;
            }
        }
    }
    let seqs: Vec<Vec<u32>> = rows.iter().map(|r| r.0.clone()).collect();
    let tokens = TokenBatch::from_sequences(&seqs, crate::data::PAD);
    let mut labels = vec![IGNORE_INDEX; tokens.ids.len()];
    for (b, (_, l)) in rows.iter().enumerate() {
        labels[b * tokens.seq..b * tokens.seq + l.len()].copy_from_slice(l);
    }
    MlmBatch { tokens, labels, stats }
}

/// One step's losses. `l_k` or `l_s` is `None` when that term was not computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub l_k: Option<f64>,
    pub l_s: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub records: Vec<LossRecord>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl LossCurve {
    /// `step,L_K,L_S,L` with empty cells for absent terms.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,L_K,L_S,L\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{}\n", r.step, cell(r.l_k), cell(r.l_s), r.total));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMeans {
    pub l_k: Option<f64>,
    pub l_s: Option<f64>,
    pub total: f64,
}

impl EpochMeans {
    fn of(records: &[LossRecord]) -> Self {
        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        Self {
            l_k: mean(records.iter().filter_map(|r| r.l_k).collect()),
            l_s: mean(records.iter().filter_map(|r| r.l_s).collect()),
            total: mean(records.iter().map(|r| r.total).collect()).unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stage1Report {
    pub curve: LossCurve,
    pub epochs: Vec<EpochMeans>,
}

pub struct Stage1Loss {
    /// `None` when neither term could be computed.
    pub total: Option<Tensor>,
    pub l_k: Option<f64>,
    pub l_s: Option<f64>,
}

fn knowledge_routing(target: KnowledgeTarget) -> RoutingMode {
    match target {
        KnowledgeTarget::DomainAdapter(i) => RoutingMode::AdapterOnly(i),
        KnowledgeTarget::TaskAdapters => RoutingMode::Vanilla,
    }
}

/// Builds `lambda * L_K + L_S` on `tape`. The knowledge term runs the domain
/// half through the trained adapter alone; the sampling term runs the
/// general half through the FFN and aligns each adapter-layer adapter output
/// with the (detached) FFN output over non-padding tokens.
pub fn stage1_loss(
    tape: &mut Tape,
    model: &Model,
    store: &ParameterStore,
    domain: Option<&MlmBatch>,
    general: Option<&MlmBatch>,
    cfg: &Stage1Config,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<Stage1Loss> {
    let mut l_k = None;
    let mut terms: Vec<Tensor> = Vec::new();
    if let Some(d) = domain.filter(|d| d.supervised() > 0) {
        let opts = ForwardOptions {
            capture: false,
            rng: rng.as_mut().map(|r| &mut **r as &mut dyn RngCore),
        };
        let out = model.forward(tape, store, &d.tokens, &knowledge_routing(cfg.target), opts)?;
        let logits = lm_head_forward(tape, store, model.config(), out.hidden)?;
        let (ce, _) = tape.masked_cross_entropy(logits, &d.labels)?;
        l_k = Some(tape.scalar_value(ce));
        terms.push(tape.scale(ce, cfg.lambda));
    }
    let mut l_s = None;
    if let (Some(g), KnowledgeTarget::DomainAdapter(i)) = (general, cfg.target) {
        if cfg.sampling_loss && g.tokens.batch > 0 && !model.config().adapter_layers.is_empty() {
            let opts = ForwardOptions {
                capture: true,
                rng: rng.as_mut().map(|r| &mut **r as &mut dyn RngCore),
            };
            let out = model.forward(tape, store, &g.tokens, &RoutingMode::Vanilla, opts)?;
            let real = g.tokens.real_rows();
            let mut pairs = Vec::with_capacity(out.captures.len());
            for c in &out.captures {
                let f = tape.gather_rows(c.ffn_out, &real)?;
                let k = tape.gather_rows(c.adapter_outs[i], &real)?;
                pairs.push((f, k));
            }
            let ls = tape.l2_alignment(&pairs)?;
            l_s = Some(tape.scalar_value(ls));
            terms.push(ls);
        }
    }
    let total = match terms.as_slice() {
        [] => None,
        [t] => Some(*t),
        [a, b] => Some(tape.add(*a, *b)?),
        _ => unreachable!(),
    };
    Ok(Stage1Loss { total, l_k, l_s })
}

/// One optimizer step. Returns `None` (and leaves the store untouched) when
/// the batch yields no loss term.
#[allow(clippy::too_many_arguments)]
pub fn stage1_step(
    model: &Model,
    store: &mut ParameterStore,
    opt: &mut OptimizerState,
    domain: Option<&MlmBatch>,
    general: Option<&MlmBatch>,
    cfg: &Stage1Config,
    lr_scale: f64,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<LossRecord>> {
    let mut tape = Tape::new();
    let loss = stage1_loss(&mut tape, model, store, domain, general, cfg, Some(rng))?;
    let Some(total) = loss.total else {
        return Ok(None);
    };
    tape.backward(total)?;
    tape.write_grads(store)?;
    opt.step(store, lr_scale)?;
    Ok(Some(LossRecord {
        step,
        l_k: loss.l_k,
        l_s: loss.l_s,
        total: tape.scalar_value(total),
    }))
}

/// Endless reshuffled pass over `len` indices.
struct Cycler {
    order: Vec<usize>,
    cursor: usize,
}

impl Cycler {
    fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            cursor: len,
        }
    }

    fn take(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Steps per epoch: enough paired halves to cover the longer corpus once.
pub fn steps_per_epoch(domain_len: usize, general_len: usize, cfg: &Stage1Config) -> usize {
    let (d_half, g_half) = cfg.halves();
    let d = domain_len.div_ceil(d_half);
    if g_half == 0 {
        d
    } else {
        d.max(general_len.div_ceil(g_half))
    }
}

/// Trains the knowledge target for up to `cfg.epochs` epochs. Each step
/// pairs a domain half with a general half; the shorter corpus cycles, and an
/// epoch ends once the longer one has been covered. `on_epoch` sees the store
/// after every epoch and may stop training early.
pub fn stage1_train(
    model: &Model,
    store: &mut ParameterStore,
    domain: &[DomainItem],
    general: &[Vec<u32>],
    cfg: &Stage1Config,
    mut on_epoch: impl FnMut(usize, &ParameterStore, &EpochMeans) -> ControlFlow<()>,
) -> Result<Stage1Report> {
    cfg.validate()?;
    if domain.is_empty() {
        return Err(TrainError::Empty("domain corpus"));
    }
    let (d_half, g_half) = cfg.halves();
    if g_half > 0 && general.is_empty() {
        return Err(TrainError::Empty("general corpus"));
    }
    store.set_trainable(freeze_mask(Stage::Knowledge(cfg.target), model.config())?)?;
    let per_epoch = steps_per_epoch(domain.len(), general.len(), cfg);
    let schedule = ScheduleConfig::new(cfg.warmup_epochs * per_epoch, cfg.epochs * per_epoch)?;
    let mut opt = OptimizerState::new(AdamW {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamW::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = model.config().vocab_size;
    let mut domain_cycle = Cycler::new(domain.len());
    let mut general_cycle = Cycler::new(general.len());
    let mut report = Stage1Report::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let first = report.curve.records.len();
        for _ in 0..per_epoch {
            let items: Vec<&DomainItem> = domain_cycle
                .take(d_half, &mut rng)
                .into_iter()
                .map(|i| &domain[i])
                .collect();
            let mut d_batch = collate_domain(&items, vocab, derive_seed(cfg.seed, 1, step as u64));
            if cfg.summary_token {
                add_summary_labels(&mut d_batch);
            }
            let g_batch = (g_half > 0).then(|| {
                let seqs: Vec<Vec<u32>> = general_cycle
                    .take(g_half, &mut rng)
                    .into_iter()
                    .map(|i| general[i].clone())
                    .collect();
                mlm_collate_with(
                    &seqs,
                    vocab,
                    &MaskingConfig::default(),
                    derive_seed(cfg.seed, 2, step as u64),
                )
            });
            let lr_scale = lr_at(step, schedule);
            if let Some(rec) = stage1_step(
                model,
                store,
                &mut opt,
                Some(&d_batch),
                g_batch.as_ref(),
                cfg,
                lr_scale,
                step,
                &mut rng,
            )? {
                report.curve.records.push(rec);
            }
            step += 1;
        }
        let means = EpochMeans::of(&report.curve.records[first..]);
        report.epochs.push(means);
        if on_epoch(epoch, store, &means).is_break() {
            break;
        }
    }
    Ok(report)
}

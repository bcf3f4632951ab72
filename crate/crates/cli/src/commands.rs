//! The `mixda` subcommands. Each is a pure function of its config, input
//! files and seed; outputs go under the configured output directory.

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{routing_name, ConfigError, RunConfig};
use crate::snapshot::Snapshot;
use mixda_core::data::{
    load_corpus, triple_to_cloze, Cloze, CorpusFormat, DataError, Dataset, KnowledgeTriple, LabeledExample, Templates,
    Vocab, PAD,
};
use mixda_core::eval::{aggregate_seeds, gate_report, metrics, EvalError, Metric, MetricReport, SeedAggregate};
use mixda_core::model::{
    freeze_mask, is_backbone_param, KnowledgeTarget, Model, ModelConfig, ModelError, RoutingMode, Stage, TaskKind,
    TokenBatch,
};
use mixda_core::tensor::ParameterStore;
use mixda_core::training::{
    golds, grid_search, mask_fill_accuracy, predict, pretrain, single_mask_clozes, stage1_train, stage2_train,
    transplant_adapter, DomainItem, GridPoint, LabelSpace, Stage1Report, Stage2Report, TaskExample, TrainError,
};
use std::collections::BTreeSet;
use std::fmt;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

/// Epoch interval at which Stage 1 checks its early-stop target.
pub const STOP_CHECK_EVERY: usize = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Checkpoint(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::TaskMismatch { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            TrainError::Eval(v) => v.into(),
            TrainError::Empty(_) | TrainError::UnknownLabel { .. } => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn ckpt_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Checkpoint(format!("{}: {e}", path.display()))
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Checkpoint(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// The ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Full method.
    None,
    /// Stage 2 routes through the domain adapter alone; no gate.
    NoMoa,
    /// Stage 1 without the general half and the sampling loss.
    NoOld,
    /// Both stages with task adapters only.
    NoDa,
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "no-moa" => Ok(Ablation::NoMoa),
            "no-old" => Ok(Ablation::NoOld),
            "no-da" => Ok(Ablation::NoDa),
            other => Err(CliError::Config(format!(
                "unknown ablation mode {other:?}; known: no-moa, no-old, no-da"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoMoa => "no-moa",
            Ablation::NoOld => "no-old",
            Ablation::NoDa => "no-da",
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    ck.save(path).map_err(|e| ckpt_err(path, e))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("missing input file {}", path.display())))
    }
}

fn load_text(path: &Path) -> Result<Vec<String>> {
    match load_corpus(path, CorpusFormat::JsonlText)? {
        Dataset::Text(t) if !t.is_empty() => Ok(t),
        _ => Err(CliError::Data(format!("{} has no sentences", path.display()))),
    }
}

pub fn load_labeled(path: &Path) -> Result<Vec<LabeledExample>> {
    match load_corpus(path, CorpusFormat::JsonlLabeled)? {
        Dataset::Labeled(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::Data(format!("{} has no examples", path.display()))),
    }
}

enum DomainCorpus {
    Triples(Vec<KnowledgeTriple>, Templates),
    Text(Vec<String>),
}

impl DomainCorpus {
    fn load(cfg: &RunConfig, path: &Path) -> Result<Self> {
        let format = CorpusFormat::parse(&cfg.data.domain_format)?;
        match load_corpus(path, format)? {
            Dataset::Triples(t) if !t.is_empty() => {
                let mut templates = Templates::builtin();
                if let Some(p) = &cfg.data.templates {
                    templates.extend_from_file(p)?;
                }
                Ok(DomainCorpus::Triples(t, templates))
            }
            Dataset::Text(t) if !t.is_empty() => Ok(DomainCorpus::Text(t)),
            _ => Err(CliError::Data(format!("{} is empty", path.display()))),
        }
    }

    fn sentences(&self) -> Result<Vec<String>> {
        match self {
            DomainCorpus::Triples(t, templates) => Ok(t
                .iter()
                .map(|x| templates.instantiate(x))
                .collect::<std::result::Result<_, DataError>>()?),
            DomainCorpus::Text(t) => Ok(t.clone()),
        }
    }

    /// Training items plus the clozes used to measure injection.
    fn items(&self, vocab: &Vocab, max_len: usize) -> Result<(Vec<DomainItem>, Vec<Cloze>)> {
        match self {
            DomainCorpus::Triples(t, templates) => {
                let clozes: Vec<Cloze> = t
                    .iter()
                    .map(|x| triple_to_cloze(x, templates, vocab, max_len))
                    .collect::<std::result::Result<_, DataError>>()?;
                Ok((clozes.iter().cloned().map(DomainItem::Cloze).collect(), clozes))
            }
            DomainCorpus::Text(t) => {
                let ids: Vec<Vec<u32>> = t.iter().map(|s| vocab.encode(s, max_len)).collect();
                let clozes = single_mask_clozes(&ids);
                Ok((ids.into_iter().map(DomainItem::Text).collect(), clozes))
            }
        }
    }
}

/// A backbone with its vocabulary and model dimensions.
#[derive(Debug)]
pub struct Backbone {
    pub vocab: Vocab,
    pub checkpoint: Checkpoint,
}

const BACKBONE_KEYS: [&str; 6] = [
    "hidden_dim",
    "ffn_dim",
    "num_layers",
    "num_heads",
    "max_seq_len",
    "tie_lm_head",
];

fn dims(cfg: &ModelConfig, keys: &[&str]) -> Vec<(String, String)> {
    cfg.to_canonical_lines()
        .into_iter()
        .filter(|(k, _)| keys.contains(&k.as_str()))
        .collect()
}

fn load_backbone(path: &Path, model: &ModelConfig) -> Result<Backbone> {
    let checkpoint = Checkpoint::load(path).map_err(|e| ckpt_err(path, e))?;
    let snap = Snapshot::parse(&checkpoint.config).map_err(|e| ckpt_err(path, e))?;
    if dims(&snap.model, &BACKBONE_KEYS) != dims(model, &BACKBONE_KEYS) {
        return Err(ckpt_err(path, "backbone dimensions differ from the [model] section"));
    }
    if let Some(name) = checkpoint.tensors.keys().find(|n| !is_backbone_param(n)) {
        return Err(ckpt_err(path, format!("{name:?} is not a backbone tensor")));
    }
    Ok(Backbone {
        vocab: snap.vocab,
        checkpoint,
    })
}

fn vocab_texts(cfg: &RunConfig, general: &[String], domain: &[String]) -> Result<Vec<String>> {
    let mut texts: Vec<String> = general.iter().chain(domain).cloned().collect();
    for path in [&cfg.data.train, &cfg.data.test].into_iter().flatten() {
        if path.is_file() {
            for ex in load_labeled(path)? {
                texts.push(ex.text);
                texts.extend(ex.text2);
            }
        }
    }
    Ok(texts)
}

fn with_vocab(model: &ModelConfig, vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        ..model.clone()
    }
}

/// Fits a backbone on the general corpus: full-parameter MLM from a seeded
/// initialization.
fn fit_backbone(cfg: &RunConfig, vocab: Vocab, general: &[String]) -> Result<Backbone> {
    let model_cfg = ModelConfig {
        num_domain_adapters: 0,
        gate_style: "none".into(),
        task_adapter_style: "none".into(),
        task: TaskKind::None,
        ..with_vocab(&cfg.model, &vocab)
    };
    let model = Model::new(model_cfg.clone())?;
    let mut store = model.init(cfg.seed)?;
    let ids: Vec<Vec<u32>> = general.iter().map(|s| vocab.encode(s, model_cfg.max_seq_len)).collect();
    if cfg.pretrain.epochs > 0 {
        let losses = pretrain(&model, &mut store, &ids, &cfg.pretrain)?;
        for (e, l) in losses.iter().enumerate() {
            println!("pretrain epoch {e}: loss {l:.6}");
        }
    }
    let snap = Snapshot {
        model: model_cfg,
        vocab: vocab.clone(),
        labels: None,
        routing: None,
    };
    Ok(Backbone {
        vocab,
        checkpoint: Checkpoint::from_store(snap.to_text(), &store, is_backbone_param),
    })
}

fn to_store(ck: &Checkpoint) -> ParameterStore {
    let mut s = ParameterStore::new();
    ck.apply(&mut s);
    s
}

#[derive(Debug)]
pub struct Stage1Outcome {
    pub backbone: Backbone,
    pub backbone_path: PathBuf,
    /// Trained knowledge tensors: a domain adapter, or task adapters under no-da.
    pub adapter: Checkpoint,
    pub adapter_path: PathBuf,
    pub report: Stage1Report,
    /// Mask-fill accuracy on the domain clozes after training.
    pub injected: f64,
}

fn stage1_model(cfg: &RunConfig, vocab: &Vocab, ablation: Ablation) -> Result<ModelConfig> {
    let mut m = ModelConfig {
        gate_style: "none".into(),
        task: TaskKind::None,
        ..with_vocab(&cfg.model, vocab)
    };
    if ablation == Ablation::NoDa {
        m.num_domain_adapters = 0;
        if !m.has_task_adapters() {
            return Err(CliError::Config("no-da needs [model] task_adapter_style".into()));
        }
    } else {
        m.num_domain_adapters = 1;
        m.task_adapter_style = "none".into();
    }
    m.validate()?;
    Ok(m)
}

fn backbone_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.data.backbone.clone().unwrap_or_else(|| out.join("backbone.ckpt"))
}

/// Stage 1: injects the domain corpus into one domain adapter (or the task
/// adapters under no-da), fitting a backbone first when none is configured.
pub fn run_stage1(cfg: &RunConfig, ablation: Ablation, out: &Path) -> Result<Stage1Outcome> {
    let domain_path = cfg.require(&cfg.data.domain, "domain")?;
    require_file(domain_path)?;
    let mut s1 = cfg.stage1.clone();
    match ablation {
        Ablation::NoOld => s1.sampling_loss = false,
        Ablation::NoDa => {
            s1.sampling_loss = false;
            s1.target = KnowledgeTarget::TaskAdapters;
        }
        Ablation::None | Ablation::NoMoa => {}
    }
    let needs_general = s1.sampling_loss || cfg.data.backbone.is_none();
    let general_path = match &cfg.data.general {
        Some(p) => Some(p.as_path()),
        None if needs_general => Some(cfg.require(&cfg.data.general, "general")?),
        None => None,
    };
    if let Some(p) = general_path {
        require_file(p)?;
    }
    if let Some(p) = &cfg.data.backbone {
        require_file(p)?;
    }
    if let Some(p) = &cfg.data.templates {
        require_file(p)?;
    }

    let domain = DomainCorpus::load(cfg, domain_path)?;
    let general = general_path.map(load_text).transpose()?.unwrap_or_default();
    let backbone = match &cfg.data.backbone {
        Some(p) => load_backbone(p, &cfg.model)?,
        None => {
            let texts = vocab_texts(cfg, &general, &domain.sentences()?)?;
            let vocab = Vocab::build(texts.iter().map(String::as_str), cfg.data.vocab_max)?;
            fit_backbone(cfg, vocab, &general)?
        }
    };
    let bb_path = backbone_path(cfg, out);
    if cfg.data.backbone.is_none() {
        save(&backbone.checkpoint, &bb_path)?;
    }

    let model_cfg = stage1_model(cfg, &backbone.vocab, ablation)?;
    let model = Model::new(model_cfg.clone())?;
    backbone
        .checkpoint
        .verify(&model_cfg)
        .map_err(|e| ckpt_err(&bb_path, e))?;
    let mut store = model.init(cfg.seed)?;
    backbone.checkpoint.apply(&mut store);
    let max_len = model_cfg.max_seq_len;
    let (items, clozes) = domain.items(&backbone.vocab, max_len)?;
    let general_ids: Vec<Vec<u32>> = general.iter().map(|s| backbone.vocab.encode(s, max_len)).collect();
    let routing = match s1.target {
        KnowledgeTarget::DomainAdapter(i) => RoutingMode::AdapterOnly(i),
        KnowledgeTarget::TaskAdapters => RoutingMode::Vanilla,
    };
    let mut stop_error = None;
    let report = stage1_train(&model, &mut store, &items, &general_ids, &s1, |epoch, st, means| {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        println!(
            "stage1 epoch {epoch}: L_K {} L_S {} L {:.6}",
            cell(means.l_k),
            cell(means.l_s),
            means.total
        );
        if let Some(target) = cfg.stage1_stop_at {
            if (epoch + 1) % STOP_CHECK_EVERY == 0 {
                match mask_fill_accuracy(&model, st, &clozes, &routing, 64) {
                    Ok(acc) if acc >= target => return ControlFlow::Break(()),
                    Ok(_) => {}
                    Err(e) => {
                        stop_error = Some(e);
                        return ControlFlow::Break(());
                    }
                }
            }
        }
        ControlFlow::Continue(())
    })?;
    if let Some(e) = stop_error {
        return Err(e.into());
    }
    let injected = mask_fill_accuracy(&model, &store, &clozes, &routing, 64)?;
    println!("stage1 mask-fill accuracy on the domain corpus: {injected}");
    let mask = freeze_mask(Stage::Knowledge(s1.target), &model_cfg)?;
    let snap = Snapshot {
        model: model_cfg,
        vocab: backbone.vocab.clone(),
        labels: None,
        routing: None,
    };
    let adapter = Checkpoint::from_store(snap.to_text(), &store, |n| mask.contains(n));
    let adapter_path = out.join("adapter.ckpt");
    save(&adapter, &adapter_path)?;
    write(&out.join("stage1_loss.csv"), &report.curve.to_csv())?;
    Ok(Stage1Outcome {
        backbone,
        backbone_path: bb_path,
        adapter,
        adapter_path,
        report,
        injected,
    })
}

pub fn cmd_stage1(cfg: &RunConfig) -> Result<Stage1Outcome> {
    run_stage1(cfg, Ablation::None, &cfg.output)
}

const ADAPTER_KEYS: [&str; 8] = [
    "hidden_dim",
    "ffn_dim",
    "num_layers",
    "num_heads",
    "max_seq_len",
    "adapter_layers",
    "adapter_reduction",
    "attachment",
];

/// A Stage-1 domain adapter, checked against the backbone.
#[derive(Debug)]
pub struct AdapterInput {
    pub path: PathBuf,
    pub store: ParameterStore,
}

fn load_adapters(paths: &[PathBuf], model: &ModelConfig, vocab: &Vocab) -> Result<Vec<AdapterInput>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let key = std::fs::canonicalize(p).map_err(|e| ckpt_err(p, e))?;
        if !seen.insert(key) {
            return Err(ckpt_err(p, "adapter checkpoint given twice"));
        }
        let ck = Checkpoint::load(p).map_err(|e| ckpt_err(p, e))?;
        let snap = Snapshot::parse(&ck.config).map_err(|e| ckpt_err(p, e))?;
        if dims(&snap.model, &ADAPTER_KEYS) != dims(model, &ADAPTER_KEYS) {
            return Err(ckpt_err(
                p,
                "adapter dimensions are incompatible with the [model] section",
            ));
        }
        if snap.vocab != *vocab {
            return Err(ckpt_err(p, "adapter was trained with a different vocabulary"));
        }
        if ck.tensors.is_empty() || ck.tensors.keys().any(|n| !n.contains(".domain_adapter.0.")) {
            return Err(ckpt_err(p, "not a single-domain-adapter checkpoint"));
        }
        out.push(AdapterInput {
            path: p.clone(),
            store: to_store(&ck),
        });
    }
    Ok(out)
}

pub struct Task {
    pub space: LabelSpace,
    pub pool: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub metric: Arc<dyn Metric>,
}

fn load_task(cfg: &RunConfig) -> Result<Task> {
    let train = cfg.require(&cfg.data.train, "train")?;
    let test = cfg.require(&cfg.data.test, "test")?;
    require_file(train)?;
    require_file(test)?;
    let metric = metrics()
        .get(&cfg.data.metric)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let pool = load_labeled(train)?;
    let test = load_labeled(test)?;
    let space = if cfg.data.metric == "pearson" {
        LabelSpace::Regression
    } else {
        LabelSpace::classification(pool.iter().map(|e| e.label.as_str()))
    };
    if let LabelSpace::Classes(c) = &space {
        if let Some(bad) = c
            .iter()
            .find(|l| l.contains('\n') || l.trim() != l.as_str() || l.is_empty())
        {
            return Err(CliError::Data(format!(
                "label {bad:?} has surrounding whitespace or a line break"
            )));
        }
    }
    Ok(Task {
        space,
        pool,
        test,
        metric,
    })
}

fn stage2_model(
    cfg: &RunConfig,
    vocab: &Vocab,
    adapters: usize,
    space: &LabelSpace,
    ablation: Ablation,
) -> Result<(ModelConfig, RoutingMode)> {
    let mut m = ModelConfig {
        num_domain_adapters: adapters,
        task: space.task_kind(),
        ..with_vocab(&cfg.model, vocab)
    };
    let routing = match ablation {
        Ablation::NoMoa => {
            m.gate_style = "none".into();
            RoutingMode::AdapterOnly(0)
        }
        Ablation::NoDa => {
            m.num_domain_adapters = 0;
            m.gate_style = "none".into();
            RoutingMode::Vanilla
        }
        _ => {
            if adapters == 0 {
                m.gate_style = "none".into();
            }
            cfg.stage2_routing.clone().unwrap_or(if m.has_gate() {
                RoutingMode::Gated
            } else {
                RoutingMode::Vanilla
            })
        }
    };
    m.validate()?;
    Model::new(m.clone())?.validate_mode(&routing)?;
    freeze_mask(Stage::Task, &m)?;
    Ok((m, routing))
}

#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub report: Stage2Report,
    pub checkpoint: PathBuf,
}

#[derive(Debug)]
pub struct Stage2Outcome {
    pub metric: String,
    pub runs: Vec<SeedRun>,
    pub aggregate: SeedAggregate,
}

/// Fresh seeded store with the backbone, the domain adapters and any
/// Stage-1 task-adapter knowledge loaded.
fn stage2_store(
    model: &Model,
    seed: u64,
    backbone: &Checkpoint,
    adapters: &[AdapterInput],
    knowledge: Option<&Checkpoint>,
) -> Result<ParameterStore> {
    let mut store = model.init(seed)?;
    backbone.apply(&mut store);
    for (i, a) in adapters.iter().enumerate() {
        transplant_adapter(&mut store, &a.store, 0, i).map_err(|e| ckpt_err(&a.path, e))?;
    }
    if let Some(k) = knowledge {
        k.apply(&mut store);
    }
    Ok(store)
}

fn encode_split(space: &LabelSpace, ex: &[LabeledExample], vocab: &Vocab, max_len: usize) -> Result<Vec<TaskExample>> {
    Ok(space.encode(ex, vocab, max_len)?)
}

#[allow(clippy::too_many_arguments)]
fn run_stage2(
    cfg: &RunConfig,
    backbone: &Backbone,
    backbone_path: &Path,
    adapters: &[AdapterInput],
    knowledge: Option<&Checkpoint>,
    task: &Task,
    ablation: Ablation,
    out: &Path,
) -> Result<Stage2Outcome> {
    let (model_cfg, routing) = stage2_model(cfg, &backbone.vocab, adapters.len(), &task.space, ablation)?;
    let model = Model::new(model_cfg.clone())?;
    backbone
        .checkpoint
        .verify(&model_cfg)
        .map_err(|e| ckpt_err(backbone_path, e))?;
    let max_len = model_cfg.max_seq_len;
    let snap = Snapshot {
        model: model_cfg,
        vocab: backbone.vocab.clone(),
        labels: Some(task.space.clone()),
        routing: Some(routing.clone()),
    };
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    let mut csv = String::from("seed,best_epoch,validation,test\n");
    for &seed in &cfg.seeds {
        let split = mixda_core::data::few_shot_sample(&task.pool, &task.test, cfg.data.k, seed)?;
        let train = encode_split(&task.space, &split.train, &backbone.vocab, max_len)?;
        let val = encode_split(&task.space, &split.validation, &backbone.vocab, max_len)?;
        let test = encode_split(&task.space, &split.test, &backbone.vocab, max_len)?;
        let mut store = stage2_store(&model, seed, &backbone.checkpoint, adapters, knowledge)?;
        let s2 = mixda_core::training::Stage2Config {
            seed,
            routing: routing.clone(),
            ..cfg.stage2.clone()
        };
        let report = stage2_train(&model, &mut store, &train, &val, &test, &s2, task.metric.as_ref())?;
        println!(
            "stage2 seed {seed}: best epoch {} validation {} test {}",
            report.best_epoch, report.best_validation, report.test
        );
        let path = out.join(format!("seed-{seed}")).join("task.ckpt");
        save(&Checkpoint::from_store(snap.to_text(), &store, |_| true), &path)?;
        csv.push_str(&format!(
            "{seed},{},{},{}\n",
            report.best_epoch, report.best_validation, report.test
        ));
        runs.push(SeedRun {
            seed,
            report,
            checkpoint: path,
        });
    }
    let tests: Vec<f64> = runs.iter().map(|r| r.report.test).collect();
    let aggregate = aggregate_seeds(&tests)?;
    write(&out.join("stage2.csv"), &csv)?;
    let summary = format!(
        "metric {}\nrouting {}\nablation {}\ntest {}\n",
        task.metric.name(),
        routing_name(&routing),
        ablation.as_str(),
        aggregate
    );
    write(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(Stage2Outcome {
        metric: task.metric.name().to_string(),
        runs,
        aggregate,
    })
}

fn backbone_for_stage2(cfg: &RunConfig) -> Result<(Backbone, PathBuf)> {
    let path = backbone_path(cfg, &cfg.output);
    require_file(&path)?;
    Ok((load_backbone(&path, &cfg.model)?, path))
}

/// Stage 2 with the given domain adapters, in expert order.
pub fn cmd_stage2(cfg: &RunConfig, adapter_paths: &[PathBuf]) -> Result<Stage2Outcome> {
    for p in adapter_paths {
        if !p.is_file() {
            return Err(ckpt_err(p, "no such checkpoint"));
        }
    }
    let task = load_task(cfg)?;
    let (backbone, bb_path) = backbone_for_stage2(cfg)?;
    let adapters = load_adapters(adapter_paths, &cfg.model, &backbone.vocab)?;
    run_stage2(
        cfg,
        &backbone,
        &bb_path,
        &adapters,
        None,
        &task,
        Ablation::None,
        &cfg.output,
    )
}

#[derive(Debug)]
pub struct AblationOutcome {
    pub stage1: Stage1Outcome,
    pub stage2: Stage2Outcome,
}

/// Stage 1 then Stage 2 under one ablation, written to `<output>/ablate-<mode>`.
pub fn cmd_ablate(cfg: &RunConfig, ablation: Ablation) -> Result<AblationOutcome> {
    let out = cfg.output.join(format!("ablate-{}", ablation.as_str()));
    let task = load_task(cfg)?;
    let stage1 = run_stage1(cfg, ablation, &out)?;
    let (adapters, knowledge) = if ablation == Ablation::NoDa {
        (Vec::new(), Some(&stage1.adapter))
    } else {
        let a = AdapterInput {
            path: stage1.adapter_path.clone(),
            store: to_store(&stage1.adapter),
        };
        (vec![a], None)
    };
    let stage2 = run_stage2(
        cfg,
        &stage1.backbone,
        &stage1.backbone_path,
        &adapters,
        knowledge,
        &task,
        ablation,
        &out,
    )?;
    Ok(AblationOutcome { stage1, stage2 })
}

#[derive(Debug)]
pub struct GridOutcome {
    pub best: GridPoint,
    pub best_score: f64,
    pub scores: Vec<(GridPoint, f64)>,
}

/// Grid search over Stage-2 learning rate and batch size on one few-shot
/// split, scored by the best validation metric.
pub fn cmd_grid(cfg: &RunConfig) -> Result<GridOutcome> {
    for p in &cfg.data.adapters {
        if !p.is_file() {
            return Err(ckpt_err(p, "no such checkpoint"));
        }
    }
    let task = load_task(cfg)?;
    let (backbone, bb_path) = backbone_for_stage2(cfg)?;
    let adapters = load_adapters(&cfg.data.adapters, &cfg.model, &backbone.vocab)?;
    let (model_cfg, routing) = stage2_model(cfg, &backbone.vocab, adapters.len(), &task.space, Ablation::None)?;
    let model = Model::new(model_cfg.clone())?;
    backbone
        .checkpoint
        .verify(&model_cfg)
        .map_err(|e| ckpt_err(&bb_path, e))?;
    let max_len = model_cfg.max_seq_len;
    let split = mixda_core::data::few_shot_sample(&task.pool, &task.test, cfg.data.k, cfg.seed)?;
    let train = encode_split(&task.space, &split.train, &backbone.vocab, max_len)?;
    let val = encode_split(&task.space, &split.validation, &backbone.vocab, max_len)?;
    let base = stage2_store(&model, cfg.seed, &backbone.checkpoint, &adapters, None)?;
    let result = grid_search(&cfg.grid_lrs, &cfg.grid_batches, |p| {
        let mut store = base.clone();
        let s2 = mixda_core::training::Stage2Config {
            lr: p.lr,
            batch_size: p.batch_size,
            seed: cfg.seed,
            routing: routing.clone(),
            ..cfg.stage2.clone()
        };
        Ok(stage2_train(&model, &mut store, &train, &val, &[], &s2, task.metric.as_ref())?.best_validation)
    })?;
    let mut csv = String::from("lr,batch_size,validation\n");
    for (p, s) in &result.scores {
        csv.push_str(&format!("{:?},{},{}\n", p.lr, p.batch_size, s));
    }
    write(&cfg.output.join("grid.csv"), &csv)?;
    println!(
        "grid best: lr {:?} batch size {} validation {}",
        result.best.lr, result.best.batch_size, result.best_score
    );
    Ok(GridOutcome {
        best: result.best,
        best_score: result.best_score,
        scores: result.scores,
    })
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: MetricReport,
    pub gate: Option<mixda_core::eval::GateReport>,
}

/// Inference-only evaluation of a task checkpoint.
pub fn cmd_eval(checkpoint: &Path, data: &Path, metric: &str) -> Result<EvalOutcome> {
    let metric = metrics().get(metric).map_err(|e| CliError::Config(e.to_string()))?;
    let ck = Checkpoint::load(checkpoint).map_err(|e| ckpt_err(checkpoint, e))?;
    let snap = Snapshot::parse(&ck.config).map_err(|e| ckpt_err(checkpoint, e))?;
    let labels = snap
        .labels
        .clone()
        .ok_or_else(|| ckpt_err(checkpoint, "not a task checkpoint (no label space)"))?;
    let routing = snap.routing.clone().unwrap_or(RoutingMode::Vanilla);
    ck.verify(&snap.model).map_err(|e| ckpt_err(checkpoint, e))?;
    let model = Model::new(snap.model.clone())?;
    let mut store = model.init(0)?;
    if let Some(missing) = store.names().find(|n| !ck.tensors.contains_key(*n)) {
        return Err(ckpt_err(checkpoint, format!("missing tensor {missing:?}")));
    }
    ck.apply(&mut store);
    require_file(data)?;
    let examples = snap_encode(&labels, &load_labeled(data)?, &snap)?;
    let preds = predict(&model, &store, &examples, &routing)?;
    let report = MetricReport::compute(metric.as_ref(), &preds, &golds(&examples))?;
    print!("{}", report.to_csv());
    let gate = if matches!(routing, RoutingMode::Gated) {
        let seqs: Vec<Vec<u32>> = examples.iter().map(|e| e.ids.clone()).collect();
        let batches: Vec<TokenBatch> = seqs.chunks(32).map(|c| TokenBatch::from_sequences(c, PAD)).collect();
        let g = gate_report(&model, &store, &batches, &routing)?;
        print!("{}", g.to_csv());
        Some(g)
    } else {
        None
    };
    Ok(EvalOutcome { report, gate })
}

fn snap_encode(labels: &LabelSpace, ex: &[LabeledExample], snap: &Snapshot) -> Result<Vec<TaskExample>> {
    encode_split(labels, ex, &snap.vocab, snap.model.max_seq_len)
}

#![allow(dead_code)]

use mixda_core::data::synthetic::{general_corpus, nonce_words};
use mixda_core::data::{KnowledgeTriple, LabeledExample, Templates};
use std::path::{Path, PathBuf};

pub fn write_text(path: &Path, sentences: &[String]) {
    let body: String = sentences
        .iter()
        .map(|s| format!("{}\n", serde_json::json!({ "text": s })))
        .collect();
    std::fs::write(path, body).unwrap();
}

pub fn write_triples(path: &Path, facts: &[KnowledgeTriple]) {
    let body: String = facts
        .iter()
        .map(|t| format!("{}\t{}\t{}\n", t.subject, t.relation, t.object))
        .collect();
    std::fs::write(path, body).unwrap();
}

pub fn write_labeled(path: &Path, examples: &[LabeledExample]) {
    let body: String = examples
        .iter()
        .map(|e| format!("{}\n", serde_json::json!({ "text": e.text, "label": e.label })))
        .collect();
    std::fs::write(path, body).unwrap();
}

/// Subjects alternate between two places; the task asks which side of the
/// world each subject is on.
pub fn facts(n: usize, offset: usize, places: [&str; 2]) -> Vec<KnowledgeTriple> {
    nonce_words(n, offset)
        .into_iter()
        .enumerate()
        .map(|(i, s)| KnowledgeTriple::new(s, "/r/LocatedAt", places[i % 2]))
        .collect()
}

pub fn queries(facts: &[KnowledgeTriple], west: &[&str]) -> Vec<LabeledExample> {
    mixda_core::data::synthetic::fact_queries(facts, &Templates::builtin(), |o| {
        if west.contains(&o) { "west" } else { "east" }.to_string()
    })
    .unwrap()
}

/// A tiny end-to-end workspace: corpora, task data and a config file.
pub struct Fixture {
    pub dir: PathBuf,
    pub config: PathBuf,
}

pub const TOY_CONFIG: &str = "\
[run]
seed = 3
seeds = 1, 2
output = out

[model]
hidden_dim = 8
ffn_dim = 16
num_layers = 2
num_heads = 2
max_seq_len = 12
adapter_layers = 0, 1
adapter_reduction = 2
task_adapter_reduction = 4
gate_style = affine
gate_bias_init = 1
dropout = 0

[data]
general = general.jsonl
domain = facts.tsv
train = train.jsonl
test = test.jsonl
k = 2
metric = micro-f1

[pretrain]
epochs = 2
batch_size = 8

[stage1]
epochs = 3
batch_size = 8
lr = 1e-3

[stage2]
epochs = 3
batch_size = 2
lr = 1e-3

[grid]
lrs = 1e-3, 1e-4
batch_sizes = 2, 4
";

impl Fixture {
    pub fn new(dir: &Path) -> Self {
        Self::with_config(dir, TOY_CONFIG)
    }

    pub fn with_config(dir: &Path, config: &str) -> Self {
        let f = facts(12, 0, ["paris", "tokyo"]);
        let q = queries(&f, &["paris"]);
        write_text(&dir.join("general.jsonl"), &general_corpus(30, 1));
        write_triples(&dir.join("facts.tsv"), &f);
        write_labeled(&dir.join("train.jsonl"), &q);
        write_labeled(&dir.join("test.jsonl"), &q);
        let path = dir.join("run.ini");
        std::fs::write(&path, config).unwrap();
        Self {
            dir: dir.to_path_buf(),
            config: path,
        }
    }

    pub fn out(&self) -> PathBuf {
        self.dir.join("out")
    }

    pub fn write_config(&self, text: &str) {
        std::fs::write(&self.config, text).unwrap();
    }
}

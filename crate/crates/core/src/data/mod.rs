//! Tokenization, corpus ingestion, MLM collation, cloze construction and
//! few-shot sampling.

mod corpus;
mod fewshot;
mod knowledge;
mod mlm;
pub mod synthetic;
mod vocab;


pub use corpus::{load_corpus, parse_corpus, CorpusFormat, Dataset, LabeledExample};
pub use fewshot::{few_shot_sample, FewShotSplit};
pub use knowledge::{cloze_batch, triple_to_cloze, Cloze, KnowledgeTriple, Templates};
pub use mlm::{mlm_collate, mlm_collate_with, MaskStats, MaskingConfig, MlmBatch};
pub use vocab::{tokenize, Vocab, CLS, MASK, NUM_SPECIAL, PAD, SEP, SPECIAL_TOKENS, UNK};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid vocabulary: {0}")]
    Vocab(String),
    #[error("no template for relation {tag:?}; known: {known}")]
    MissingTemplate { tag: String, known: String },
    #[error("invalid template for {tag:?}: {reason}")]
    BadTemplate { tag: String, reason: String },
    #[error("cloze for {subject:?} needs {len} tokens, limit is {max}")]
    ClozeTooLong { subject: String, len: usize, max: usize },
    #[error("class {class:?} has {have} examples, need {need}")]
    ClassTooSmall { class: String, have: usize, need: usize },
    #[error("unknown corpus format {0:?}; known: jsonl-text, tsv-triples, jsonl-labeled")]
    UnknownFormat(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

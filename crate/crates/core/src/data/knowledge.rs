use super::mlm::{MaskStats, MlmBatch};
use super::vocab::{tokenize, Vocab, CLS, MASK, PAD};
use super::{DataError, Result};
use crate::model::TokenBatch;
use crate::tensor::IGNORE_INDEX;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KnowledgeTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl KnowledgeTriple {
    pub fn new(subject: impl Into<String>, relation: impl Into<String>, object: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
        }
    }
}

const BUILTIN: [(&str, &str); 5] = [
    ("/r/LocatedAt", "the {subj} is located at {obj} ."),
    ("/r/IsA", "a {subj} is a kind of {obj} ."),
    ("/r/UsedFor", "a {subj} is used for {obj} ."),
    ("/r/PartOf", "the {subj} is part of {obj} ."),
    ("/r/CapableOf", "a {subj} can {obj} ."),
];

/// Relation tag to sentence pattern with one `{subj}` and one `{obj}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Templates {
    map: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Self {
            map: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn empty() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, tag: &str, pattern: &str) -> Result<()> {
        for slot in ["{subj}", "{obj}"] {
            let n = pattern.matches(slot).count();
            if n != 1 {
                return Err(DataError::BadTemplate {
                    tag: tag.into(),
                    reason: format!("{slot} appears {n} times, expected once"),
                });
            }
        }
        self.map.insert(tag.to_string(), pattern.to_string());
        Ok(())
    }

    /// Adds `tag<TAB>pattern` lines; blank lines and `#` comments are skipped.
    pub fn extend_from_str(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (tag, pattern) = line.split_once('\t').ok_or_else(|| DataError::Parse {
                line: i + 1,
                reason: "expected tag<TAB>pattern".into(),
            })?;
            self.insert(tag.trim(), pattern.trim()).map_err(|e| DataError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn extend_from_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.extend_from_str(&text)
    }

    pub fn pattern(&self, tag: &str) -> Result<&str> {
        self.map
            .get(tag)
            .map(String::as_str)
            .ok_or_else(|| DataError::MissingTemplate {
                tag: tag.to_string(),
                known: self.map.keys().cloned().collect::<Vec<_>>().join(", "),
            })
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// The fully instantiated sentence for `t`.
    pub fn instantiate(&self, t: &KnowledgeTriple) -> Result<String> {
        Ok(self
            .pattern(&t.relation)?
            .replace("{subj}", &t.subject)
            .replace("{obj}", &t.object))
    }
}

/// A templated sentence with each object token replaced by `<mask>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cloze {
    /// Starts with `<cls>`.
    pub ids: Vec<u32>,
    pub masked_positions: Vec<usize>,
    pub answers: Vec<u32>,
}

impl Cloze {
    /// Ids with the answers written back into the masked positions.
    pub fn filled(&self) -> Vec<u32> {
        let mut ids = self.ids.clone();
        for (&p, &a) in self.masked_positions.iter().zip(&self.answers) {
            ids[p] = a;
        }
        ids
    }
}

pub fn triple_to_cloze(t: &KnowledgeTriple, templates: &Templates, vocab: &Vocab, max_len: usize) -> Result<Cloze> {
    let pattern = templates.pattern(&t.relation)?;
    let (before, after) = pattern.split_once("{obj}").expect("validated template");
    let before = before.replace("{subj}", &t.subject);
    let after = after.replace("{subj}", &t.subject);
    let answers: Vec<u32> = tokenize(&t.object).iter().map(|w| vocab.id(w)).collect();
    if answers.is_empty() {
        return Err(DataError::BadTemplate {
            tag: t.relation.clone(),
            reason: format!("empty object for subject {:?}", t.subject),
        });
    }
    let mut ids = vec![CLS];
    ids.extend(vocab.ids(&before));
    let start = ids.len();
    ids.extend(std::iter::repeat_n(MASK, answers.len()));
    ids.extend(vocab.ids(&after));
    if ids.len() > max_len {
        return Err(DataError::ClozeTooLong {
            subject: t.subject.clone(),
            len: ids.len(),
            max: max_len,
        });
    }
    Ok(Cloze {
        ids,
        masked_positions: (start..start + answers.len()).collect(),
        answers,
    })
}

/// Pads clozes into a batch supervised only at the masked positions.
pub fn cloze_batch(clozes: &[Cloze]) -> MlmBatch {
    let seqs: Vec<Vec<u32>> = clozes.iter().map(|c| c.ids.clone()).collect();
    let tokens = TokenBatch::from_sequences(&seqs, PAD);
    let mut labels = vec![IGNORE_INDEX; tokens.ids.len()];
    let mut stats = MaskStats::default();
    for (b, c) in clozes.iter().enumerate() {
        for (&p, &a) in c.masked_positions.iter().zip(&c.answers) {
            labels[b * tokens.seq + p] = a as i64;
            stats.selected += 1;
            stats.masked += 1;
        }
    }
    MlmBatch { tokens, labels, stats }
}

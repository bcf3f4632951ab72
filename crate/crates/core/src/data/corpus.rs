use super::knowledge::KnowledgeTriple;
use super::{DataError, Result};
use serde_json::Value;
use std::path::Path;

/// One labeled example; `label` is the class name or, for regression, the
/// target written as a decimal number.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabeledExample {
    pub text: String,
    pub text2: Option<String>,
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    JsonlText,
    TsvTriples,
    JsonlLabeled,
}

impl CorpusFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "jsonl-text" => Ok(Self::JsonlText),
            "tsv-triples" => Ok(Self::TsvTriples),
            "jsonl-labeled" => Ok(Self::JsonlLabeled),
            other => Err(DataError::UnknownFormat(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::JsonlText => "jsonl-text",
            Self::TsvTriples => "tsv-triples",
            Self::JsonlLabeled => "jsonl-labeled",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Text(Vec<String>),
    Triples(Vec<KnowledgeTriple>),
    Labeled(Vec<LabeledExample>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Text(v) => v.len(),
            Dataset::Triples(v) => v.len(),
            Dataset::Labeled(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&text, format)
}

fn parse_err(line: usize, reason: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        reason: reason.into(),
    }
}

fn string_field(obj: &Value, key: &str, line: usize) -> Result<Option<String>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(parse_err(line, format!("field {key:?} must be a string"))),
    }
}

/// Parses corpus text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<Dataset> {
    let lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    match format {
        CorpusFormat::JsonlText => {
            let mut out = Vec::new();
            for (n, line) in lines {
                let v: Value = serde_json::from_str(line).map_err(|e| parse_err(n, e.to_string()))?;
                let t = string_field(&v, "text", n)?.ok_or_else(|| parse_err(n, "missing \"text\""))?;
                out.push(t);
            }
            Ok(Dataset::Text(out))
        }
        CorpusFormat::TsvTriples => {
            let mut out = Vec::new();
            for (n, line) in lines {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 3 {
                    return Err(parse_err(
                        n,
                        format!("expected 3 tab-separated columns, got {}", cols.len()),
                    ));
                }
                if cols[2].trim().is_empty() {
                    return Err(parse_err(n, "empty object"));
                }
                out.push(KnowledgeTriple::new(cols[0].trim(), cols[1].trim(), cols[2].trim()));
            }
            Ok(Dataset::Triples(out))
        }
        CorpusFormat::JsonlLabeled => {
            let mut out = Vec::new();
            for (n, line) in lines {
                let v: Value = serde_json::from_str(line).map_err(|e| parse_err(n, e.to_string()))?;
                let text = string_field(&v, "text", n)?.ok_or_else(|| parse_err(n, "missing \"text\""))?;
                let text2 = string_field(&v, "text2", n)?;
                let label = match v.get("label") {
                    Some(Value::String(s)) => s.clone(),
                    Some(Value::Number(x)) => x.to_string(),
                    Some(Value::Bool(b)) => b.to_string(),
                    Some(_) => return Err(parse_err(n, "\"label\" must be a string, number or boolean")),
                    None => return Err(parse_err(n, "missing \"label\"")),
                };
                out.push(LabeledExample { text, text2, label });
            }
            Ok(Dataset::Labeled(out))
        }
    }
}

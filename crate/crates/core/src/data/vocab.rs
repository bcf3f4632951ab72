use super::{DataError, Result};
use std::collections::{BTreeMap, HashMap};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const CLS: u32 = 3;
pub const SEP: u32 = 4;
pub const NUM_SPECIAL: u32 = 5;
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<mask>", "<cls>", "<sep>"];

/// Lowercased word tokens; every non-alphanumeric character is its own token.
/// Whitespace-delimited special tokens such as `<mask>` are kept whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let lower = word.to_lowercase();
        if SPECIAL_TOKENS.contains(&lower.as_str()) {
            out.push(lower);
            continue;
        }
        let mut cur = String::new();
        for c in lower.chars() {
            if c.is_alphanumeric() {
                cur.push(c);
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Ranks tokens of `texts` by frequency (ties lexicographic) after the
    /// reserved tokens; `max_size` counts the reserved tokens too.
    pub fn build<'a, I>(texts: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size < NUM_SPECIAL as usize {
            return Err(DataError::Vocab(format!(
                "max size {max_size} is smaller than the {NUM_SPECIAL} reserved tokens"
            )));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for tok in tokenize(text) {
                if !SPECIAL_TOKENS.contains(&tok.as_str()) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if counts.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().take(max_size - NUM_SPECIAL as usize).map(|(t, _)| t));
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIAL as usize || tokens[..NUM_SPECIAL as usize] != SPECIAL_TOKENS {
            return Err(DataError::Vocab("reserved tokens must occupy the first ids".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(DataError::Vocab(format!("token {i} is empty or contains whitespace")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(DataError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIAL
    }

    pub fn ids(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// `<cls>` followed by the token ids of `text`, truncated to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        let mut out = vec![CLS];
        out.extend(self.ids(text));
        out.truncate(max_len);
        out
    }

    /// `<cls> a <sep> b`, truncated to `max_len`.
    pub fn encode_pair(&self, a: &str, b: &str, max_len: usize) -> Vec<u32> {
        let mut out = vec![CLS];
        out.extend(self.ids(a));
        out.push(SEP);
        out.extend(self.ids(b));
        out.truncate(max_len);
        out
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(SPECIAL_TOKENS[UNK as usize]).to_string())
            .collect()
    }
}

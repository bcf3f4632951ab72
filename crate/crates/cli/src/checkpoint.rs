//! Binary checkpoint: magic, config snapshot, then named f64 tensors.
//!
//! Layout (all integers little-endian `u64`):
//!
//! ```text
//! "MIXDA1"
//! config length, config bytes (UTF-8)
//! entry count
//! per entry: name length, name bytes, rank, extents..., f64 payload
//! ```
//!
//! Entries are written in lexicographic name order.

use mixda_core::model::{parameter_shapes, ModelConfig};
use mixda_core::tensor::{Array, ParameterStore};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 6] = b"MIXDA1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a mixda checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{0} bytes of trailing data after the last entry")]
    TrailingBytes(usize),
    #[error("invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("entry {0:?} out of order or duplicated")]
    Order(String),
    #[error("entry {name:?}: extents {shape:?} do not describe a valid tensor")]
    BadShape { name: String, shape: Vec<usize> },
    #[error("entry {name:?} has shape {got:?}, the embedded config expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("entry {0:?} is not a parameter of the embedded config")]
    UnknownEntry(String),
    #[error("embedded config: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// Canonical configuration text the tensors were produced under.
    pub config: String,
    pub tensors: BTreeMap<String, Array>,
}

impl Checkpoint {
    pub fn new(config: impl Into<String>) -> Self {
        Self {
            config: config.into(),
            tensors: BTreeMap::new(),
        }
    }

    /// Takes the tensors of `store` selected by `select`.
    pub fn from_store(config: impl Into<String>, store: &ParameterStore, select: impl Fn(&str) -> bool) -> Self {
        let tensors = store
            .iter()
            .filter(|(n, _)| select(n))
            .map(|(n, a)| (n.to_string(), a.clone()))
            .collect();
        Self {
            config: config.into(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.tensors.values().map(|a| a.data().len() * 8).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + self.config.len() + payload + 64 * (self.tensors.len() + 1));
        out.extend_from_slice(MAGIC);
        put_u64(&mut out, self.config.len());
        out.extend_from_slice(self.config.as_bytes());
        put_u64(&mut out, self.tensors.len());
        for (name, a) in &self.tensors {
            put_u64(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u64(&mut out, a.shape().len());
            for &e in a.shape() {
                put_u64(&mut out, e);
            }
            for &v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let len = r.len("config length")?;
        let config = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|_| CheckpointError::Utf8("config"))?
            .to_string();
        let count = r.u64("entry count")?;
        let mut tensors = BTreeMap::new();
        let mut last: Option<String> = None;
        for _ in 0..count {
            let len = r.len("entry name length")?;
            let name = std::str::from_utf8(r.take(len, "entry name")?)
                .map_err(|_| CheckpointError::Utf8("entry name"))?
                .to_string();
            if last.as_ref().is_some_and(|l| *l >= name) {
                return Err(CheckpointError::Order(name));
            }
            let rank = r.len("rank")?;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.len("extents")?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .filter(|&n| n.checked_mul(8).is_some())
                .ok_or_else(|| CheckpointError::BadShape {
                    name: name.clone(),
                    shape: shape.clone(),
                })?;
            let raw = r.take(numel * 8, "payload")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let array = Array::new(shape.clone(), data).map_err(|_| CheckpointError::BadShape {
                name: name.clone(),
                shape,
            })?;
            last = Some(name.clone());
            tensors.insert(name, array);
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Checks that every entry names a parameter of `cfg` with the same shape.
    pub fn verify(&self, cfg: &ModelConfig) -> Result<()> {
        let shapes = parameter_shapes(cfg).map_err(|e| CheckpointError::Config(e.to_string()))?;
        for (name, a) in &self.tensors {
            let expected = shapes
                .get(name)
                .ok_or_else(|| CheckpointError::UnknownEntry(name.clone()))?;
            if expected.as_slice() != a.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    expected: expected.clone(),
                    got: a.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Writes every entry into `store`, replacing existing values.
    pub fn apply(&self, store: &mut ParameterStore) {
        for (name, a) in &self.tensors {
            store.set(name.clone(), a.clone());
        }
    }
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    /// A length field; anything larger than the remaining input is truncation.
    fn len(&mut self, what: &'static str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| CheckpointError::Truncated(what))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new("[model]\nhidden_dim = 4\n");
        c.tensors.insert(
            "b".into(),
            Array::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
        );
        c.tensors
            .insert("a".into(), Array::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        c.tensors.insert("s".into(), Array::new(vec![], vec![7.5]).unwrap());
        c
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for (n, a) in &c.tensors {
            let b = &back.tensors[n];
            assert_eq!(a.shape(), b.shape());
            let bits = |x: &Array| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    fn u(v: u64) -> [u8; 8] {
        v.to_le_bytes()
    }

    fn entry(name: &str, v: f64) -> Vec<u8> {
        [
            &u(name.len() as u64)[..],
            name.as_bytes(),
            &u(1),
            &u(1),
            &v.to_le_bytes(),
        ]
        .concat()
    }

    #[test]
    fn layout_matches_hand_encoding() {
        let mut c = Checkpoint::new("x");
        c.tensors.insert("w".into(), Array::new(vec![1], vec![2.0]).unwrap());
        let expected = [&b"MIXDA1"[..], &u(1), b"x", &u(1), &entry("w", 2.0)].concat();
        assert_eq!(c.to_bytes(), expected);
    }

    #[test]
    fn empty_store_is_valid() {
        let c = Checkpoint::new("");
        let bytes = c.to_bytes();
        assert_eq!(bytes.len(), 6 + 8 + 8);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn unsorted_or_duplicate_names_are_rejected() {
        let head = [&b"MIXDA1"[..], &u(0), &u(2)].concat();
        let sorted = [&head[..], &entry("a", 1.0), &entry("b", 2.0)].concat();
        assert_eq!(Checkpoint::from_bytes(&sorted).unwrap().tensors.len(), 2);
        let swapped = [&head[..], &entry("b", 2.0), &entry("a", 1.0)].concat();
        assert!(matches!(Checkpoint::from_bytes(&swapped), Err(CheckpointError::Order(n)) if n == "a"));
        let dup = [&head[..], &entry("a", 2.0), &entry("a", 1.0)].concat();
        assert!(matches!(Checkpoint::from_bytes(&dup), Err(CheckpointError::Order(_))));
    }

    #[test]
    fn every_truncation_is_detected() {
        let bytes = sample().to_bytes();
        for cut in 0..bytes.len() {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, CheckpointError::Truncated(_) | CheckpointError::BadMagic),
                "cut {cut}: {err}"
            );
        }
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'N';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::BadMagic)));
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::TrailingBytes(1))
        ));
        // a huge extent must not allocate
        let mut c = Checkpoint::new("");
        c.tensors.insert("w".into(), Array::new(vec![1], vec![0.0]).unwrap());
        let mut bytes = c.to_bytes();
        let ext = bytes.len() - 16;
        bytes[ext..ext + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn verify_checks_names_and_shapes() {
        let cfg = ModelConfig::default();
        let store = mixda_core::model::init_parameters(&cfg, 0).unwrap();
        let c = Checkpoint::from_store("", &store, |n| n.contains("domain_adapter"));
        assert!(!c.tensors.is_empty());
        c.verify(&cfg).unwrap();
        let mut bad = c.clone();
        let (name, a) = bad
            .tensors
            .iter()
            .find(|(_, a)| a.shape().len() == 2)
            .map(|(n, a)| (n.clone(), a.clone()))
            .unwrap();
        bad.tensors
            .insert(name, Array::zeros(&[a.shape()[0] + 1, a.shape()[1]]));
        assert!(matches!(bad.verify(&cfg), Err(CheckpointError::ShapeMismatch { .. })));
        let mut extra = c;
        extra.tensors.insert("nope".into(), Array::zeros(&[1]));
        assert!(matches!(extra.verify(&cfg), Err(CheckpointError::UnknownEntry(_))));
    }
}

use super::{Array, Result, TensorError};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Array,
    pub grad: Option<Array>,
}

/// Flat, name-keyed registry of every array in a model, plus the set of
/// names currently receiving gradient updates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
    trainable: BTreeSet<String>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        self.params.insert(name, Parameter { value, grad: None });
        Ok(())
    }

    /// Inserts or overwrites a value, keeping the trainable flag.
    pub fn set(&mut self, name: impl Into<String>, value: Array) {
        let name = name.into();
        self.params.insert(name, Parameter { value, grad: None });
    }

    pub fn remove(&mut self, name: &str) -> Option<Array> {
        self.trainable.remove(name);
        self.params.remove(name).map(|p| p.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Array> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Array> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Option<&Array> {
        self.params.get(name).and_then(|p| p.grad.as_ref())
    }

    /// Names in lexicographic order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter)> {
        self.params.iter_mut()
    }

    /// Total number of scalar values across all parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn set_trainable<I, S>(&mut self, names: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut mask = BTreeSet::new();
        for n in names {
            let n = n.into();
            if !self.params.contains_key(&n) {
                return Err(TensorError::UnknownParameter(n));
            }
            mask.insert(n);
        }
        self.trainable = mask;
        Ok(())
    }

    pub fn trainable(&self) -> &BTreeSet<String> {
        &self.trainable
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.contains(name)
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &[f64]) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        if grad.len() != p.value.len() {
            return Err(TensorError::Dimension {
                op: "accumulate_grad",
                lhs: p.value.shape().to_vec(),
                rhs: vec![grad.len()],
            });
        }
        match &mut p.grad {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(grad) {
                    *a += b;
                }
            }
            None => {
                p.grad = Some(Array::new(p.value.shape().to_vec(), grad.to_vec())?);
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// SHA-256 over names, shapes and exact value bits of the selected
    /// parameters, in name order.
    pub fn digest<F: Fn(&str) -> bool>(&self, select: F) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            if !select(name) {
                continue;
            }
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &e in p.value.shape() {
                h.update((e as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Copies every parameter whose name satisfies `select` from `other`.
    pub fn copy_from<F: Fn(&str) -> bool>(&mut self, other: &ParameterStore, select: F) {
        for (name, value) in other.iter() {
            if select(name) {
                self.set(name.to_string(), value.clone());
            }
        }
    }
}

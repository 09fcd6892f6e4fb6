use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learned by the optimizer.
    Trainable,
    /// Running statistics; updated by the forward pass, never by the optimizer.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Always the same shape as `value`.
    pub grad: Tensor,
    pub kind: ParamKind,
    pub frozen: bool,
}

impl ParamEntry {
    /// Whether an optimizer step may modify this entry.
    pub fn updatable(&self) -> bool {
        self.kind == ParamKind::Trainable && !self.frozen
    }
}

/// Named tensors in insertion order, with gradient buffers and frozen flags.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(name, "duplicate parameter name"));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            grad: Tensor::zeros(value.shape()),
            name,
            value,
            kind,
            frozen: false,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.index.get(name).map(|&i| &mut self.entries[i])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::config(name, "no such parameter"))
    }

    /// Replaces a value, keeping the shape contract.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let e = self
            .get_mut(name)
            .ok_or_else(|| Error::config(name, "no such parameter"))?;
        crate::tensor::expect_same_shape(name, &e.value, &value)?;
        e.value = value;
        Ok(())
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor) -> Result<()> {
        let e = self
            .get_mut(name)
            .ok_or_else(|| Error::config(name, "no such parameter"))?;
        crate::tensor::expect_same_shape(name, &e.value, &grad)?;
        e.grad = grad;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Number of scalar values across all entries.
    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Flags every entry whose name starts with `prefix`; returns how many matched.
    pub fn freeze_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            e.frozen = true;
            n += 1;
        }
        n
    }

    /// Freezes every `encoder.*` parameter. Idempotent.
    pub fn freeze_encoder(&mut self) -> usize {
        self.freeze_prefix("encoder.")
    }

    pub fn unfreeze_all(&mut self) {
        self.entries.iter_mut().for_each(|e| e.frozen = false);
    }
}

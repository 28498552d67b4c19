use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::tape::{Gradients, Tape};
use crate::tensor::Tensor;

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn next_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// How [`ParamStore::absorb`] combines new gradients with existing ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Overwrite,
    Accumulate,
}

#[derive(Debug)]
struct Param {
    name: String,
    value: Arc<Tensor>,
    grad: Tensor,
}

/// Named trainable tensors with gradient accumulators.
///
/// Every store carries a process-unique id so a [`Tape`] can tell stores
/// apart; clones receive a fresh id.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    params: Vec<Param>,
    index: BTreeMap<String, ParamId>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            uid: next_uid(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Arc::new((*p.value).clone()),
                    grad: p.grad.clone(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            uid: next_uid(),
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name,
            value: Arc::new(value),
            grad,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    /// Parameter names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub(crate) fn shared_value(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.params[id.0].value)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Copy gradients of every parameter bound on `tape` into the store.
    /// Parameters the tape never touched are zeroed under `Overwrite`.
    pub fn absorb(&mut self, tape: &Tape, grads: &Gradients, mode: GradMode) {
        if mode == GradMode::Overwrite {
            self.zero_grads();
        }
        for (id, var) in tape.bound_params(self) {
            if let Some(g) = grads.raw(var) {
                let dst = self.params[id.0].grad.data_mut();
                dst.iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
        }
    }

    pub fn grad_sq_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.sq_norm()).sum()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Overwrite every value from `other`, matching by name.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let id = other
                .id(&p.name)
                .ok_or_else(|| AutodiffError::UnknownParam(p.name.clone()))?;
            let src = other.value(id);
            if src.shape() != p.value.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "copy_values_from",
                    lhs: p.value.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            p.value = Arc::new(src.clone());
        }
        Ok(())
    }

    /// Name → tensor snapshot, for serialization.
    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), (*p.value).clone()))
            .collect()
    }

    /// Load values by name. Every stored parameter must be present with a matching shape.
    pub fn load_map(&mut self, map: &BTreeMap<String, Tensor>) -> Result<()> {
        for p in &mut self.params {
            let src = map
                .get(&p.name)
                .ok_or_else(|| AutodiffError::UnknownParam(p.name.clone()))?;
            if src.shape() != p.value.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "load_map",
                    lhs: p.value.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            p.value = Arc::new(src.clone());
        }
        if let Some(extra) = map.keys().find(|k| !self.index.contains_key(*k)) {
            return Err(AutodiffError::UnknownParam(extra.clone()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absorb_modes() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(3.0)).unwrap();
        assert!(store.add("w", Tensor::scalar(1.0)).is_err());
        for (mode, expected) in [(GradMode::Overwrite, 6.0), (GradMode::Accumulate, 12.0)] {
            let mut t = Tape::new();
            let x = t.param(&store, w);
            let y = t.mul(x, x).unwrap();
            let g = t.backward(y).unwrap();
            store.absorb(&t, &g, mode);
            assert_eq!(store.grad(w).item(), Some(expected));
        }
    }

    #[test]
    fn frozen_store_gets_no_binding() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(3.0)).unwrap();
        let mut t = Tape::new();
        t.freeze(&store);
        let x = t.param(&store, w);
        assert!(!t.requires_grad(x));
        assert_eq!(t.bound_params(&store).count(), 0);
    }

    #[test]
    fn clone_gets_new_uid() {
        let store = ParamStore::new();
        assert_ne!(store.clone().uid(), store.uid());
    }
}

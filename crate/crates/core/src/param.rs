//! Named parameter storage and per-step binding onto a tape.

use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Result;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry<F: Scalar> {
    pub name: String,
    pub value: Tensor<F>,
    pub trainable: bool,
}

/// Owns every parameter of a model. Iteration order is insertion order,
/// which is fixed by construction and therefore deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F: Scalar> {
    entries: Vec<ParamEntry<F>>,
    by_name: BTreeMap<String, usize>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value, trainable });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<F>) {
        debug_assert_eq!(self.entries[id.0].value.shape(), value.shape());
        self.entries[id.0].value = value;
    }

    pub fn id_of(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<F>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Total number of trainable scalar values.
    pub fn trainable_numel(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }
}

/// Binds parameters to leaves of one tape, caching the binding so a
/// parameter used twice maps to a single leaf.
pub struct Session<'t, 's, F: Scalar> {
    tape: &'t Tape<F>,
    store: &'s ParamStore<F>,
    bound: RefCell<Vec<Option<Var>>>,
}

impl<'t, 's, F: Scalar> Session<'t, 's, F> {
    pub fn new(tape: &'t Tape<F>, store: &'s ParamStore<F>) -> Self {
        Self { tape, store, bound: RefCell::new(vec![None; store.len()]) }
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore<F> {
        self.store
    }

    pub fn var(&self, id: ParamId) -> Var {
        let mut bound = self.bound.borrow_mut();
        if let Some(v) = bound[id.0] {
            return v;
        }
        let entry = self.store.get(id);
        let v = self.tape.leaf(entry.value.clone(), entry.trainable);
        bound[id.0] = Some(v);
        v
    }

    /// Every parameter bound during this session, with its leaf var.
    pub fn bound(&self) -> Vec<(ParamId, Var)> {
        self.bound
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.add("w", Tensor::zeros(vec![2, 2]), true).unwrap();
        assert!(matches!(
            store.add("w", Tensor::zeros(vec![2]), true),
            Err(TensorError::DuplicateParam(_))
        ));
    }

    #[test]
    fn session_binds_once() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let id = store.add("w", Tensor::filled(vec![2], 1.5).unwrap(), true).unwrap();
        let tape = Tape::new();
        let sess = Session::new(&tape, &store);
        let a = sess.var(id);
        let b = sess.var(id);
        assert_eq!(a, b);
        assert_eq!(tape.op_count(), 1);
    }
}

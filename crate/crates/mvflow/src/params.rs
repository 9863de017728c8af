//! Named parameter registry.
//!
//! Parameters live outside any tape; a training step leases them onto a
//! fresh tape, and the optimizer updates them in place from the returned
//! gradients. Names are hierarchical (`blocks.0.video.attn.q.w`) so branch
//! freezes and checkpoints can address them by prefix.

use std::collections::HashMap;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type ParamId = usize;

pub struct ParamSet<E: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<E>>,
    by_name: HashMap<String, ParamId>,
}

impl<E: Scalar> ParamSet<E> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), by_name: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<E>) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<E> {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.tensors[id]
    }

    pub fn set(&mut self, id: ParamId, tensor: Tensor<E>) {
        assert_eq!(self.tensors[id].shape(), tensor.shape(), "param {} shape", self.names[id]);
        self.tensors[id] = tensor;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<E>)> {
        self.names.iter().enumerate().map(|(i, n)| (i, n.as_str(), &self.tensors[i]))
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Ids whose names satisfy the predicate.
    pub fn matching<F: Fn(&str) -> bool>(&self, pred: F) -> Vec<ParamId> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| pred(n))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (_, name, t) in self.iter() {
            out.insert(name, t.cast());
        }
        out
    }
}

impl<E: Scalar> Default for ParamSet<E> {
    fn default() -> Self {
        Self::new()
    }
}

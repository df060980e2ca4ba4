use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
struct Param<T> {
    name: String,
    value: Arc<Tensor<T>>,
    frozen: bool,
}

/// Named trainable parameters plus their accumulated gradients.
///
/// Tied weights are a single entry referenced from several places, so
/// mutating the entry is visible through every user.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    grads: Vec<Option<Tensor<T>>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Config(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value: Arc::new(value),
            frozen: false,
        });
        self.grads.push(None);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.params[id.0].value)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let cur = &self.params[id.0].value;
        if cur.shape() != value.shape() {
            return Err(TensorError::Shape {
                op: "set",
                lhs: cur.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.params[id.0].value = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn grad_mut(&mut self, id: ParamId) -> Option<&mut Tensor<T>> {
        self.grads[id.0].as_mut()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(g).expect("gradient shape matches parameter"),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    fn set_frozen(&mut self, names: &[&str], frozen: bool) -> Result<()> {
        let ids = names
            .iter()
            .map(|n| {
                self.id(n)
                    .ok_or_else(|| TensorError::Config(format!("unknown parameter {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        for id in ids {
            self.params[id.0].frozen = frozen;
        }
        Ok(())
    }

    /// Frozen parameters still pass gradients through; only optimizer updates are skipped.
    pub fn freeze(&mut self, names: &[&str]) -> Result<()> {
        self.set_frozen(names, true)
    }

    pub fn unfreeze(&mut self, names: &[&str]) -> Result<()> {
        self.set_frozen(names, false)
    }

    /// `(name, tensor)` pairs in registration order.
    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|p| (p.name.as_str(), &*p.value))
    }
}

//! Named parameter registry shared by the model, the tape and the optimizer.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{RngStream, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    value: Arc<Tensor>,
    /// Frozen parameters enter the tape as constants and are never handed to the optimizer.
    pub trainable: bool,
    /// Skips decoupled weight decay (norm scales and biases).
    pub decay_exempt: bool,
}

impl Param {
    pub fn value(&self) -> &Tensor {
        &self.value
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, decay_exempt: bool) -> ParamId {
        debug_assert!(self.find(name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name: name.to_string(),
            value: Arc::new(value),
            trainable: true,
            decay_exempt,
        });
        ParamId(self.params.len() - 1)
    }

    /// Weight initialized from `N(0, std²)` using a substream keyed by the name.
    pub fn add_normal(&mut self, rng: &RngStream, name: &str, shape: &[usize], std: f64) -> ParamId {
        let mut r = rng.split(name);
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * r.normal()).collect();
        let t = Tensor::new(shape, data).expect("shape matches data");
        self.add(name, t, false)
    }

    /// Bias or norm parameter filled with a constant; decay-exempt.
    pub fn add_const(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, value), true)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.params[id.0].value)
    }

    /// Mutable access; copies the tensor first if a tape still holds it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let current = &self.params[id.0];
        if current.value.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                current.name,
                current.value.shape(),
                value.shape()
            )));
        }
        self.params[id.0].value = Arc::new(value);
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Marks every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
        }
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

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Ids handed to the optimizer.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn frozen_count(&self) -> usize {
        self.total_count() - self.trainable_count()
    }

    /// Little-endian bytes of every parameter under `prefix`, in registration order.
    pub fn bytes_with_prefix(&self, prefix: &str) -> Vec<u8> {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .flat_map(|p| p.value.data().iter().flat_map(|x| x.to_le_bytes()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_split_into_trainable_and_frozen() {
        let rng = RngStream::new(1);
        let mut store = ParamStore::new();
        store.add_normal(&rng, "extractor.w", &[3, 4], 0.1);
        store.add_const("head.b", &[5], 0.0);
        store.set_trainable_prefix("extractor.", false);
        assert_eq!(store.total_count(), 17);
        assert_eq!(store.trainable_count(), 5);
        assert_eq!(store.frozen_count(), 12);
        assert_eq!(store.trainable_ids(), vec![ParamId(1)]);
    }

    #[test]
    fn init_depends_on_name_not_order() {
        let rng = RngStream::new(9);
        let mut a = ParamStore::new();
        a.add_normal(&rng, "x", &[4], 1.0);
        let ya = a.add_normal(&rng, "y", &[4], 1.0);
        let mut b = ParamStore::new();
        let yb = b.add_normal(&rng, "y", &[4], 1.0);
        assert!(a.value(ya).bitwise_eq(b.value(yb)));
    }
}

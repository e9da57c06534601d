//! Named parameter tensors with freeze flags and seeded initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform in [-sqrt(6/fan_in), sqrt(6/fan_in)]; for layers feeding ReLU.
    HeUniform,
    /// Uniform in [-sqrt(6/(fan_in+fan_out)), ...]; for everything else.
    GlorotUniform,
    Zeros,
    /// Values supplied by the caller (e.g. loaded from disk).
    Explicit,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: bool,
    pub init: InitScheme,
}

/// Flat store of parameters; ids are indices, assigned in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
        frozen: bool,
        init: InitScheme,
    ) -> ParamId {
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            frozen,
            init,
        });
        id
    }

    /// Weight matrix plus zero bias for a dense layer, He-uniform when the
    /// layer is followed by ReLU and Glorot-uniform otherwise.
    pub fn init_dense(
        &mut self,
        name: &str,
        d_in: usize,
        d_out: usize,
        feeds_relu: bool,
        rng: &mut ChaCha8Rng,
    ) -> (ParamId, ParamId) {
        let (scheme, limit) = if feeds_relu {
            (InitScheme::HeUniform, (6.0 / d_in as f64).sqrt())
        } else {
            (
                InitScheme::GlorotUniform,
                (6.0 / (d_in + d_out) as f64).sqrt(),
            )
        };
        let w: Vec<f64> = (0..d_in * d_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        let w_id = self.add(
            format!("{name}.w"),
            Tensor::new(vec![d_in, d_out], w).expect("shape"),
            false,
            scheme,
        );
        let b_id = self.add(
            format!("{name}.b"),
            Tensor::zeros(&[d_out]),
            false,
            InitScheme::Zeros,
        );
        (w_id, b_id)
    }

    /// Conv kernel (C_out, C_in, k, k), He-uniform over fan_in = C_in*k*k.
    pub fn init_conv(
        &mut self,
        name: &str,
        c_out: usize,
        c_in: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let fan_in = c_in * kernel * kernel;
        let limit = (6.0 / fan_in as f64).sqrt();
        let values: Vec<f64> = (0..c_out * fan_in)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        self.add(
            format!("{name}.k"),
            Tensor::new(vec![c_out, c_in, kernel, kernel], values).expect("shape"),
            false,
            InitScheme::HeUniform,
        )
    }

    pub fn get(&self, id: ParamId) -> Result<&ParamEntry> {
        self.entries
            .get(id.0)
            .ok_or_else(|| Error::State(format!("unknown parameter id {}", id.0)))
    }

    pub fn tensor(&self, id: ParamId) -> Result<&Tensor> {
        Ok(&self.get(id)?.tensor)
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> Result<&mut Tensor> {
        self.entries
            .get_mut(id.0)
            .map(|e| &mut e.tensor)
            .ok_or_else(|| Error::State(format!("unknown parameter id {}", id.0)))
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries.get(id.0).map(|e| e.frozen).unwrap_or(true)
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        if let Some(e) = self.entries.get_mut(id.0) {
            e.frozen = frozen;
        }
    }

    pub fn freeze_all(&mut self) {
        for e in &mut self.entries {
            e.frozen = true;
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e))
    }

    /// Total scalar count over non-frozen entries.
    pub fn trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| !e.frozen)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Total scalar count over all entries.
    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, streams};

    #[test]
    fn init_is_deterministic_per_seed() {
        let mut a = ParameterStore::new();
        let mut b = ParameterStore::new();
        let (wa, _) = a.init_dense("fc", 8, 4, true, &mut stream(3, streams::INIT));
        let (wb, _) = b.init_dense("fc", 8, 4, true, &mut stream(3, streams::INIT));
        assert_eq!(a.tensor(wa).unwrap(), b.tensor(wb).unwrap());
    }

    #[test]
    fn he_limit_bounds_values() {
        let mut store = ParameterStore::new();
        let (w, b) = store.init_dense("fc", 100, 10, true, &mut stream(5, streams::INIT));
        let limit = (6.0f64 / 100.0).sqrt();
        assert!(store
            .tensor(w)
            .unwrap()
            .values()
            .iter()
            .all(|v| v.abs() <= limit));
        assert!(store.tensor(b).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trainable_scalars_respects_freeze() {
        let mut store = ParameterStore::new();
        let (w, b) = store.init_dense("fc", 4, 3, false, &mut stream(1, streams::INIT));
        assert_eq!(store.trainable_scalars(), 4 * 3 + 3);
        store.set_frozen(w, true);
        assert_eq!(store.trainable_scalars(), 3);
        store.set_frozen(b, true);
        assert_eq!(store.trainable_scalars(), 0);
    }
}

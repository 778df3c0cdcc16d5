use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor2;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors with gradient accumulators.
///
/// Parameters are created in a fixed order from a seeded generator, so two
/// stores built by the same code with the same seed are bitwise identical.
#[derive(Clone, Debug)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor2>,
    grads: Vec<Tensor2>,
    index: HashMap<String, usize>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: &str, value: Tensor2) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        let id = self.values.len();
        self.grads.push(Tensor2::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// Weight matrix drawn uniformly from +-sqrt(6 / (fan_in + fan_out)).
    pub fn add_weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.random_range(-limit..=limit))
            .collect();
        self.insert(name, Tensor2::from_vec(fan_in, fan_out, data)?)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.insert(name, Tensor2::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn expect_id(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor2 {
        &self.grads[id.0]
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor2) -> Result<()> {
        let dst = &mut self.grads[id.0];
        if dst.shape() != grad.shape() {
            return Err(Error::shape(
                "accumulate",
                format!(
                    "gradient {:?} for parameter {} of shape {:?}",
                    grad.shape(),
                    self.names[id.0],
                    dst.shape()
                ),
            ));
        }
        dst.add_assign(grad);
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor2::len).sum()
    }

    /// Copies values of identically named parameters from `other`.
    pub fn load_values(&mut self, named: &[(String, Tensor2)]) -> Result<()> {
        for (name, value) in named {
            let id = self.expect_id(name)?;
            if self.values[id.0].shape() != value.shape() {
                return Err(Error::shape(
                    "load",
                    format!(
                        "parameter {name}: stored {:?}, model {:?}",
                        value.shape(),
                        self.values[id.0].shape()
                    ),
                ));
            }
            self.values[id.0] = value.clone();
        }
        Ok(())
    }

    pub fn named_values(&self) -> Vec<(String, Tensor2)> {
        self.names
            .iter()
            .cloned()
            .zip(self.values.iter().cloned())
            .collect()
    }
}

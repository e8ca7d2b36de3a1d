use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{NumericsError, Result};

/// One named parameter (or non-trainable buffer, e.g. batch-norm running
/// statistics). Values sit behind a `RefCell` so forward passes can update
/// buffers and the optimizer can write in place through a shared reference.
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    pub trainable: bool,
}

impl Param {
    pub fn values(&self) -> Vec<f64> {
        self.data.borrow().clone()
    }

    pub fn numel(&self) -> usize {
        self.data.borrow().len()
    }

    pub fn set(&self, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.numel());
        *self.data.borrow_mut() = values;
    }

    pub fn update(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.data.borrow_mut());
    }

    pub fn nudge(&self, index: usize, delta: f64) {
        self.data.borrow_mut()[index] += delta;
    }
}

/// Ordered collection of named parameters. Registration order is the
/// canonical iteration order (optimizer updates and checkpoints rely on it
/// for bitwise reproducibility).
#[derive(Default)]
pub struct ParamSet {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(NumericsError::Param(format!("duplicate parameter '{name}'")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "param",
                details: format!("'{name}': shape {:?} vs {} values", shape, data.len()),
            });
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Param {
            name: name.to_string(),
            shape,
            data: RefCell::new(data),
            trainable,
        });
        Ok(())
    }

    /// Gaussian-initialized trainable parameter (std 0.02 convention lives
    /// at the call sites).
    pub fn add_gaussian<R: Rng>(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
    ) -> Result<()> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        self.add(name, shape, data, true)
    }

    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>, trainable: bool) -> Result<()> {
        let n: usize = shape.iter().product();
        self.add(name, shape, vec![0.0; n], trainable)
    }

    pub fn add_ones(&mut self, name: &str, shape: Vec<usize>, trainable: bool) -> Result<()> {
        let n: usize = shape.iter().product();
        self.add(name, shape, vec![1.0; n], trainable)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn require(&self, name: &str) -> Result<&Param> {
        self.get(name)
            .ok_or_else(|| NumericsError::Param(format!("unknown parameter '{name}'")))
    }

    pub fn entries(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn trainable_entries(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter().filter(|p| p.trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|p| p.numel()).sum()
    }

    /// Flat snapshot of every value, in registration order. Bit-exact
    /// equality of two snapshots means the sets are identical.
    pub fn snapshot(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for p in &self.entries {
            out.extend_from_slice(&p.data.borrow());
        }
        out
    }

    pub fn restore(&self, snapshot: &[f64]) {
        let mut offset = 0;
        for p in &self.entries {
            let n = p.numel();
            p.set(snapshot[offset..offset + n].to_vec());
            offset += n;
        }
        debug_assert_eq!(offset, snapshot.len());
    }
}

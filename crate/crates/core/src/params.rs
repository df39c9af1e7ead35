//! Named parameter lists shared by the backbone and the counting head.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::data::container::{DType, TensorContainer};
use crate::error::{Error, Result};
use crate::numerics::{Array, Gradients, Tape, Var};

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    arrays: Vec<Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, array: Array) -> usize {
        self.names.push(name.into());
        self.arrays.push(array);
        self.arrays.len() - 1
    }

    pub fn push_normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut impl Rng,
    ) -> usize {
        let normal = Normal::new(0.0, std).expect("valid std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.push(
            name,
            Array::new(shape.to_vec(), data).expect("finite normal draws"),
        )
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn get(&self, i: usize) -> &Array {
        &self.arrays[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Array {
        &mut self.arrays[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn arrays(&self) -> &[Array] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Array] {
        &mut self.arrays
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(String::as_str).zip(&self.arrays)
    }

    pub fn num_values(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.arrays
            .iter()
            .map(|a| tape.leaf(a.clone(), trainable))
            .collect()
    }

    /// Gradients for each bound parameter, in store order.
    pub fn collect_grads(&self, grads: &Gradients, vars: &[Var]) -> Vec<Array> {
        vars.iter().map(|v| grads.wrt(*v).clone()).collect()
    }

    pub fn update_hash(&self, h: &mut Sha256) {
        for (n, a) in self.iter() {
            h.update((n.len() as u64).to_le_bytes());
            h.update(n.as_bytes());
            for d in a.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in a.data() {
                h.update(v.to_le_bytes());
            }
        }
    }

    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        self.update_hash(&mut h);
        crate::text_space::hex_string(&h.finalize())
    }

    /// Appends every parameter to `c` under `prefix.name`.
    pub fn export(&self, prefix: &str, c: &mut TensorContainer) -> Result<()> {
        for (n, a) in self.iter() {
            c.push(format!("{prefix}.{n}"), a.clone(), DType::F64)?;
        }
        Ok(())
    }

    /// Overwrites values from `c`, requiring identical names and shapes.
    pub fn import(&mut self, prefix: &str, c: &TensorContainer) -> Result<()> {
        for i in 0..self.len() {
            let key = format!("{prefix}.{}", self.names[i]);
            let a = c.require(&key)?;
            if a.shape() != self.arrays[i].shape() {
                return Err(Error::Format(format!(
                    "{key}: stored shape {:?} but model expects {:?}",
                    a.shape(),
                    self.arrays[i].shape()
                )));
            }
            self.arrays[i] = a.clone();
        }
        Ok(())
    }
}

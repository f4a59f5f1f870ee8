use std::collections::HashMap;

use rand::Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named learnable tensors, kept in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(id)
    }

    /// Uniform Xavier initialisation for a `[fan_in, fan_out]` matrix.
    pub fn insert_xavier(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::of(rng.gen_range(-bound..bound)))
            .collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data)?)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(self.get(self.id(name)?))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let id = self.id(name)?;
        Ok(self.get_mut(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            index: self.index.clone(),
        }
    }
}

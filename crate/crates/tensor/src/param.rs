use std::collections::HashMap;

use crate::error::{Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

/// Named trainable parameters in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> Result<ParamId> {
        let name = name.into();
        crate::graph::check_len("param", shape, value.len())?;
        if self.index.contains_key(&name) {
            return Err(TensorError::Checkpoint(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, shape: shape.to_vec(), value });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.id(name).map(|id| &mut self.params[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradient accumulator aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub(crate) values: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads { values: store.params.iter().map(|p| vec![0.0; p.value.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn add_scaled(&mut self, id: ParamId, g: &[f64], scale: f64) {
        for (acc, x) in self.values[id.0].iter_mut().zip(g) {
            *acc += scale * x;
        }
    }

    pub fn zero(&mut self) {
        for v in &mut self.values {
            v.fill(0.0);
        }
    }

    /// Euclidean norm over all coordinates.
    pub fn norm(&self) -> f64 {
        self.values.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for x in self.values.iter_mut().flatten() {
            *x *= c;
        }
    }
}

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor2<T>,
    pub grad: Tensor2<T>,
    /// Frozen parameters are read by the forward pass but never updated.
    pub frozen: bool,
    /// Whether decoupled weight decay applies (matrices yes, biases and norms no).
    pub decay: bool,
}

/// Named, ordered collection of learnable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    fn insert(&mut self, name: &str, tensor: Tensor2<T>, decay: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let (r, c) = tensor.shape();
        let id = self.params.len();
        self.params.push(Parameter {
            name: name.to_string(),
            grad: Tensor2::zeros(r, c),
            tensor,
            frozen: false,
            decay,
        });
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn add(&mut self, name: &str, tensor: Tensor2<T>) -> ParamId {
        self.insert(name, tensor, true)
    }

    /// Adds a parameter excluded from weight decay.
    pub fn add_no_decay(&mut self, name: &str, tensor: Tensor2<T>) -> ParamId {
        self.insert(name, tensor, false)
    }

    pub fn add_normal<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let dist = Normal::new(0.0, std).expect("valid std");
        let t = Tensor2::from_fn(rows, cols, |_, _| T::of(dist.sample(rng)));
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor2<T> {
        &self.params[id.0].tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor2::zeros(p.tensor.rows(), p.tensor.cols());
        }
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.frozen = frozen;
            }
        }
    }

    /// Overwrites values by name; shapes and the name set must match exactly.
    pub fn load_values(&mut self, values: &[(String, Tensor2<T>)]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (name, t) in values {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            let p = &mut self.params[id.0];
            if p.tensor.shape() != t.shape() {
                return Err(Error::Dimension {
                    op: "load_values",
                    lhs: p.tensor.shape(),
                    rhs: t.shape(),
                });
            }
            p.tensor = t.clone();
        }
        Ok(())
    }
}

//! Named parameter storage and binding onto a tape.

use indexmap::IndexMap;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered map from parameter name to value. Insertion order is the
/// serialization and optimizer order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let (idx, previous) = self.entries.insert_full(name.into(), value);
        debug_assert!(previous.is_none(), "duplicate parameter name");
        ParamId(idx)
    }

    /// Zero-mean normal init with standard deviation `1/sqrt(fan_in)`.
    pub fn add_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let std = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::randn(shape, std, rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).map(|(k, _)| k.as_str()).unwrap_or("")
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.values_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Replaces every value from `other`, which must hold the same names and
    /// shapes in any order.
    pub fn load_from(&mut self, other: &IndexMap<String, Tensor>) -> Result<()> {
        for (name, value) in self.entries.iter_mut() {
            let src = other
                .get(name)
                .ok_or_else(|| Error::format("parameters", format!("missing parameter {name}")))?;
            if src.shape() != value.shape() {
                return Err(Error::format(
                    "parameters",
                    format!(
                        "{name}: stored shape {:?}, model expects {:?}",
                        src.shape(),
                        value.shape()
                    ),
                ));
            }
            *value = src.clone();
        }
        Ok(())
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.entries.values().map(|t| tape.param(t)).collect(),
        }
    }

    /// Records every parameter as a constant (inference, no gradients).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.entries.values().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    pub fn to_map(&self) -> IndexMap<String, Tensor> {
        self.entries.clone()
    }
}

/// Tape handles for every parameter of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Wraps handles created elsewhere, e.g. by a gradient checker.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }
}

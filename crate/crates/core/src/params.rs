use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Container, Real, Tape, Tensor, Var};

/// Named model parameters in canonical (insertion) order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Registers every parameter as a trainable leaf on `tape`.
    pub fn register(&self, tape: &mut Tape<T>) -> ParamVars {
        ParamVars {
            vars: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v.clone())))
                .collect(),
        }
    }

    /// Writes every parameter under `prefix` + name.
    pub fn write_to(&self, container: &mut Container, prefix: &str) {
        for (k, v) in &self.entries {
            container.insert(format!("{prefix}{k}"), v);
        }
    }

    /// Reads parameters named like `template` from `container`, checking shapes.
    pub fn read_like(template: &Self, container: &Container, prefix: &str) -> Result<Self> {
        let mut out = Params::new();
        for (k, v) in &template.entries {
            let t: Tensor<T> = container.get(&format!("{prefix}{k}"))?;
            if t.shape() != v.shape() {
                return Err(Error::Config(format!(
                    "parameter `{k}` has shape {:?}, configuration expects {:?}",
                    t.shape(),
                    v.shape()
                )));
            }
            out.insert(k.clone(), t);
        }
        Ok(out)
    }
}

/// Tape handles for a registered [`Params`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: IndexMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl FromIterator<(String, Var)> for ParamVars {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self {
            vars: iter.into_iter().collect(),
        }
    }
}

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Array, Gradients, Tape, Var};

/// Named learnable arrays, iterated in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    entries: BTreeMap<String, Array<T>>,
}

impl<T: Scalar> Default for Params<T> {
    fn default() -> Self {
        Self { entries: BTreeMap::new() }
    }
}

impl<T: Scalar> Params<T> {
    pub fn insert(&mut self, name: impl Into<String>, value: Array<T>) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Array<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array<T>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Array<T>> {
        self.entries.remove(name)
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.entries.retain(|k, _| !k.starts_with(prefix));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array<T>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Array::len).sum()
    }

    /// Zero-filled arrays with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), Array::zeros(v.shape()))).collect(),
        }
    }

    /// `self += scale * other` for every name present in both.
    pub fn axpy(&mut self, scale: T, other: &Self) {
        for (k, v) in self.entries.iter_mut() {
            if let Some(o) = other.entries.get(k) {
                v.axpy(scale, o);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Array::is_finite)
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params { entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Record every parameter as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.entries.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect(),
        }
    }
}

/// Parameter leaves recorded on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Bind names to existing tape variables.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self { vars: vars.into_iter().collect() }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("parameter {name} is not bound")))
    }

    /// Gather adjoints into a parameter-shaped store; untouched parameters get zeros.
    pub fn collect_grads<T: Scalar>(&self, params: &Params<T>, grads: &mut Gradients<T>) -> Params<T> {
        let mut out = Params::default();
        for (name, value) in params.iter() {
            let g = self
                .vars
                .get(name)
                .and_then(|&v| grads.take(v))
                .unwrap_or_else(|| Array::zeros(value.shape()));
            out.insert(name.clone(), g);
        }
        out
    }
}

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter tensors, ordered by name so iteration is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.map.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    /// Like [`ParamSet::get`] but reports a missing name as an error.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::UnboundParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.map.remove(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    /// Merge `other` into `self`; entries of `other` win.
    pub fn extend(&mut self, other: ParamSet) {
        self.map.extend(other.map);
    }

    /// Subset whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        self.map
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn zeros_like(&self) -> ParamSet {
        self.map
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.rows(), v.cols())))
            .collect()
    }

    #[must_use]
    pub fn scale(&self, c: f64) -> ParamSet {
        self.map
            .iter()
            .map(|(k, v)| (k.clone(), v.scale(c)))
            .collect()
    }

    /// `self += c * other` for every name in `other`; names missing from
    /// `self` are inserted.
    pub fn axpy(&mut self, c: f64, other: &ParamSet) {
        for (k, v) in &other.map {
            match self.map.get_mut(k) {
                Some(t) => t.axpy(c, v),
                None => {
                    self.map.insert(k.clone(), v.scale(c));
                }
            }
        }
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.map.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn num_values(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self {
            map: iter.into_iter().collect(),
        }
    }
}

impl IntoIterator for ParamSet {
    type Item = (String, Tensor);
    type IntoIter = std::collections::btree_map::IntoIter<String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.map.into_iter()
    }
}

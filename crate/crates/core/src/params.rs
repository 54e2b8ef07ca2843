//! Named parameter tensors.
//!
//! All trainable state lives in a [`ParamSet`]: an insertion-ordered map
//! from parameter name (e.g. `head.conv1.weight`) to an f64 tensor.
//! Frozen encoder weights are deliberately *not* part of any `ParamSet`,
//! so the optimizer cannot touch them by construction.

use indexmap::IndexMap;
use ndarray::{ArrayD, ArrayViewD};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Ordered map of named trainable tensors.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ParamSet {
    map: IndexMap<String, ArrayD<f64>>,
}

/// Gradients, keyed identically to the [`ParamSet`] they differentiate.
#[derive(Debug, Clone, Default)]
pub struct GradSet {
    map: IndexMap<String, ArrayD<f64>>,
}

/// Shape summary of one trainable tensor, as reported by model inspection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub len: usize,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a tensor. Panics on duplicate names: parameter registration
    /// is a programming-time concern, not a runtime condition.
    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), value);
        assert!(prev.is_none(), "duplicate parameter name {name:?}");
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.map.get(name)
    }

    /// Fetch a tensor that is known to exist; panics otherwise.
    pub fn expect(&self, name: &str) -> &ArrayD<f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Total scalar count across all tensors.
    pub fn total_elements(&self) -> usize {
        self.map.values().map(|v| v.len()).sum()
    }

    pub fn infos(&self) -> Vec<ParamInfo> {
        self.map
            .iter()
            .map(|(name, v)| ParamInfo {
                name: name.clone(),
                shape: v.shape().to_vec(),
                len: v.len(),
            })
            .collect()
    }

    /// Content digest over names, shapes, and exact bit patterns, in
    /// insertion order. Two sets digest equal iff they are bit-identical.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, v) in &self.map {
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in v.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            h.update([0u8]);
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// True when every scalar in every tensor is finite.
    pub fn all_finite(&self) -> bool {
        self.map.values().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

impl GradSet {
    /// Zero gradients matching the shapes of `params`.
    pub fn zeros_like(params: &ParamSet) -> Self {
        let mut map = IndexMap::new();
        for (name, v) in params.iter() {
            map.insert(name.clone(), ArrayD::zeros(v.raw_dim()));
        }
        Self { map }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.map.get(name)
    }

    /// Add `delta` into the gradient for `name`. The entry must already
    /// exist (create via [`GradSet::zeros_like`]) and shapes must agree.
    pub fn accumulate(&mut self, name: &str, delta: ArrayViewD<'_, f64>) {
        let g = self
            .map
            .get_mut(name)
            .unwrap_or_else(|| panic!("gradient for unknown parameter {name:?}"));
        assert_eq!(g.shape(), delta.shape(), "gradient shape mismatch for {name:?}");
        *g += &delta;
    }

    /// Scale every gradient in place (e.g. by 1/batch_size).
    pub fn scale(&mut self, factor: f64) {
        for v in self.map.values_mut() {
            *v *= factor;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.map.iter()
    }

    /// Sum of absolute values across all entries; cheap "did anything
    /// flow here" probe for tests.
    pub fn l1_norm(&self) -> f64 {
        self.map
            .values()
            .map(|v| v.iter().map(|x| x.abs()).sum::<f64>())
            .sum()
    }
}

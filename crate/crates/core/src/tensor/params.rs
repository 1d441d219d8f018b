use std::collections::{BTreeMap, BTreeSet};

use super::Tensor;
use crate::error::{Error, Result};

/// Named parameter registry with a frozen/trainable partition.
///
/// Paths iterate in sorted order, which fixes checkpoint layout and
/// optimizer traversal order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
    frozen_prefixes: BTreeSet<String>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a leaf under `path`. Duplicate paths are rejected.
    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) -> Result<Tensor> {
        let path = path.into();
        if !tensor.is_leaf() {
            return Err(Error::Usage(format!("parameter {path} is not a leaf tensor")));
        }
        if self.tensors.contains_key(&path) {
            return Err(Error::Usage(format!("duplicate parameter path {path}")));
        }
        tensor.set_requires_grad(!self.matches_frozen(&path));
        self.tensors.insert(path, tensor.clone());
        Ok(tensor)
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.tensors
            .get(path)
            .ok_or_else(|| Error::Lookup(format!("no parameter at {path}")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    fn matches_frozen(&self, path: &str) -> bool {
        self.frozen_prefixes.iter().any(|p| path.starts_with(p.as_str()))
    }

    pub fn is_frozen(&self, path: &str) -> bool {
        self.matches_frozen(path)
    }

    pub fn frozen_prefixes(&self) -> impl Iterator<Item = &str> {
        self.frozen_prefixes.iter().map(String::as_str)
    }

    /// Replaces the frozen set and updates `requires_grad` on every tensor.
    pub fn set_frozen<I, S>(&mut self, prefixes: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.frozen_prefixes = prefixes.into_iter().map(Into::into).collect();
        for (path, t) in &self.tensors {
            t.set_requires_grad(!self.matches_frozen(path));
        }
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.iter().filter(|(_, t)| t.requires_grad())
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().map(|(_, t)| t.numel()).sum()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&self) {
        self.tensors.values().for_each(Tensor::zero_grad);
    }

    /// Independent copy: new leaves with the same values and partition.
    pub fn duplicate(&self) -> ParamSet {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let c = Tensor::new(t.shape().to_vec(), t.to_vec()).expect("shape already valid");
                c.set_requires_grad(t.requires_grad());
                (k.clone(), c)
            })
            .collect();
        ParamSet { tensors, frozen_prefixes: self.frozen_prefixes.clone() }
    }

    /// Copies of every parameter value, keyed by path.
    pub fn snapshot(&self) -> BTreeMap<String, Vec<f64>> {
        self.iter().map(|(k, t)| (k.to_string(), t.to_vec())).collect()
    }

    /// Writes values from a snapshot back into the live tensors.
    pub fn restore(&self, snap: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (path, t) in &self.tensors {
            let v = snap
                .get(path)
                .ok_or_else(|| Error::Lookup(format!("snapshot lacks {path}")))?;
            if v.len() != t.numel() {
                return Err(Error::dim("restore", t.shape(), &[v.len()]));
            }
            t.set_data(v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freeze_prefix_controls_requires_grad() {
        let mut ps = ParamSet::new();
        ps.insert("block.0.w", Tensor::zeros(vec![2])).unwrap();
        ps.insert("head.w", Tensor::zeros(vec![3])).unwrap();
        ps.set_frozen(["block."]);
        assert!(!ps.get("block.0.w").unwrap().requires_grad());
        assert!(ps.get("head.w").unwrap().requires_grad());
        assert_eq!(ps.num_trainable(), 3);
        // late insertions honour the current partition
        ps.insert("block.1.w", Tensor::zeros(vec![1])).unwrap();
        assert!(!ps.get("block.1.w").unwrap().requires_grad());
    }

    #[test]
    fn duplicate_paths_rejected() {
        let mut ps = ParamSet::new();
        ps.insert("a", Tensor::zeros(vec![1])).unwrap();
        assert!(ps.insert("a", Tensor::zeros(vec![1])).is_err());
        assert!(matches!(ps.get("b"), Err(Error::Lookup(_))));
    }

    #[test]
    fn paths_are_sorted() {
        let mut ps = ParamSet::new();
        for p in ["z", "a", "m"] {
            ps.insert(p, Tensor::zeros(vec![1])).unwrap();
        }
        assert_eq!(ps.paths().collect::<Vec<_>>(), vec!["a", "m", "z"]);
    }
}

//! Named parameter tensors with deterministic iteration order.

use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{CoreError, Result};

/// All learnable weights of a model, keyed by hierarchical names like
/// `fe.l1.w`. Iteration is lexicographic, so flatten/unflatten and the
/// optimizer state all share one stable coordinate order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.map.contains_key(name) {
            return Err(CoreError::InvalidArg(format!("duplicate parameter `{name}`")));
        }
        self.map.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map.get(name).ok_or_else(|| CoreError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.map.get_mut(name).ok_or_else(|| CoreError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn total_scalars(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// Concatenate all values in iteration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_scalars());
        for t in self.map.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuild a store with identical names/shapes from a flat vector.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamStore> {
        if flat.len() != self.total_scalars() {
            return Err(CoreError::ShapeMismatch(format!(
                "unflatten: {} values for {} scalars",
                flat.len(),
                self.total_scalars()
            )));
        }
        let mut map = BTreeMap::new();
        let mut offset = 0;
        for (name, t) in &self.map {
            let n = t.numel();
            let data = flat[offset..offset + n].to_vec();
            map.insert(name.clone(), Tensor::new(t.shape().to_vec(), data)?);
            offset += n;
        }
        Ok(ParamStore { map })
    }
}

/// Per-parameter gradient buffers, keyed like the owning `ParamStore`.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    map: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Gradients { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: String, g: Vec<f64>) {
        self.map.insert(name, g);
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.map.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Vec<f64>)> {
        self.map.iter_mut()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// self += other, elementwise per parameter; names must match when both
    /// sides carry the parameter.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (name, src) in &other.map {
            match self.map.get_mut(name) {
                Some(dst) => {
                    if dst.len() != src.len() {
                        return Err(CoreError::ShapeMismatch(format!(
                            "gradient `{name}`: {} vs {}",
                            dst.len(),
                            src.len()
                        )));
                    }
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                None => {
                    self.map.insert(name.clone(), src.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.map.values_mut() {
            for v in g.iter_mut() {
                *v *= c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_name_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(vec![2])).unwrap();
        assert!(s.insert("w", Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn iteration_order_is_sorted() {
        let mut s = ParamStore::new();
        s.insert("b", Tensor::zeros(vec![1])).unwrap();
        s.insert("a", Tensor::zeros(vec![1])).unwrap();
        s.insert("c", Tensor::zeros(vec![1])).unwrap();
        let names: Vec<&String> = s.names().collect();
        assert_eq!(names, ["a", "b", "c"]);
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trips(values in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let mut s = ParamStore::new();
            let third = values.len().div_ceil(3).max(1);
            for (i, chunk) in values.chunks(third).enumerate() {
                s.insert(&format!("p{i}"), Tensor::from_vec(chunk.to_vec()).unwrap()).unwrap();
            }
            let flat = s.flatten();
            let back = s.unflatten(&flat).unwrap();
            prop_assert_eq!(&back, &s);
            // Bit-exact, not just approximately equal.
            let reflat = back.flatten();
            for (a, b) in flat.iter().zip(&reflat) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

use indexmap::IndexMap;
use rand::Rng;

use super::tensor::{DType, Tensor};
use crate::error::{HireError, Result};

/// Named trainable tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(HireError::Config(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, value.requiring_grad());
        Ok(())
    }

    /// Registers a `fan_in × fan_out` matrix drawn uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        dtype: DType,
        rng: &mut R,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let t = Tensor::new(&[fan_in, fan_out], data)?.with_dtype(dtype);
        self.insert(name, t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
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

    /// Total scalar count over all parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.entries.values_mut() {
            t.zero_grad();
        }
    }

    /// Re-rounds every value to `dtype`.
    pub fn cast(&mut self, dtype: DType) {
        for t in self.entries.values_mut() {
            let v = std::mem::replace(t, Tensor::zeros(&[1]));
            *t = v.with_dtype(dtype).requiring_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn rejects_duplicate_names() {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(ps.insert("w", Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn keeps_insertion_order() {
        let mut ps = ParamStore::new();
        for n in ["z", "a", "m"] {
            ps.insert(n, Tensor::zeros(&[1])).unwrap();
        }
        assert_eq!(ps.names().collect::<Vec<_>>(), ["z", "a", "m"]);
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamStore::new();
        ps.insert_uniform("w", 16, 4, DType::F64, &mut rng).unwrap();
        let w = ps.get("w").unwrap();
        assert_eq!(w.shape(), &[16, 4]);
        assert!(w.data().iter().all(|x| x.abs() <= 0.25));
        assert!(w.requires_grad());
    }
}

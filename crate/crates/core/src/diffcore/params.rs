use indexmap::IndexMap;

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Insertion-ordered collection of named trainable tensors with their gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        if !value.all_finite() {
            return Err(Error::NonFinite {
                op: format!("insert `{name}`"),
            });
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name, Param { value, grad });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.entries
            .get_index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.get(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.get(name)?.grad)
    }

    pub(crate) fn by_index(&self, i: usize) -> (&str, &Param<T>) {
        let (k, v) = self.entries.get_index(i).expect("parameter index in range");
        (k.as_str(), v)
    }

    pub(crate) fn grad_by_index_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Global L2 norm of all gradients, accumulated in f64.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|p| p.grad.data())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Copy converted to another precision; gradients are reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (k, p) in &self.entries {
            let value = p.value.cast::<U>();
            let grad = Tensor::zeros(value.shape());
            out.entries.insert(k.clone(), Param { value, grad });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected_and_zero_grads_clears() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Tensor::filled(&[2], 1.0)).unwrap();
        assert!(s.insert("w", Tensor::zeros(&[1])).is_err());
        s.grad_by_index_mut(0).data_mut()[1] = 3.0;
        assert_eq!(s.grad_norm(), 3.0);
        s.zero_grads();
        assert!(s.grad("w").unwrap().data().iter().all(|&g| g == 0.0));
        assert_eq!(s.grad("w").unwrap().shape(), s.value("w").unwrap().shape());
    }
}

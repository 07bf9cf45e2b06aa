use ndarray::{ArrayD, IxDyn};
use rand::Rng as _;

use super::Scalar;
use crate::error::{Error, Result};
use crate::seed;

/// Named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub value: ArrayD<T>,
}

/// Ordered collection of named tensors. Gradients and optimizer moments use
/// the same layout as the parameters they belong to.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<T>) -> usize {
        self.tensors.push(Tensor { name: name.into(), value });
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &ArrayD<T> {
        &self.tensors[i].value
    }

    pub fn get_mut(&mut self, i: usize) -> &mut ArrayD<T> {
        &mut self.tensors[i].value
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    value: ArrayD::zeros(t.value.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.value += &b.value;
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            t.value.mapv_inplace(|v| v * s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.value.iter().all(|v| v.is_finite()))
    }

    /// Flat view index -> (tensor, element) for finite-difference checks.
    pub fn flat_get(&self, mut i: usize) -> T {
        for t in &self.tensors {
            if i < t.value.len() {
                return *t.value.iter().nth(i).unwrap();
            }
            i -= t.value.len();
        }
        panic!("flat index out of range")
    }

    pub fn flat_set(&mut self, mut i: usize, v: T) {
        for t in &mut self.tensors {
            if i < t.value.len() {
                *t.value.iter_mut().nth(i).unwrap() = v;
                return;
            }
            i -= t.value.len();
        }
        panic!("flat index out of range")
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    value: t.value.mapv(|v| U::of(v.to_f64().unwrap())),
                })
                .collect(),
        }
    }

    /// Checks names and shapes agree with `other`.
    pub fn check_layout<U>(&self, other: &ParamSet<U>) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Shape {
                expected: format!("{} tensors", self.tensors.len()),
                actual: format!("{} tensors", other.tensors.len()),
            });
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Shape {
                    expected: format!("{} {:?}", a.name, a.value.shape()),
                    actual: format!("{} {:?}", b.name, b.value.shape()),
                });
            }
        }
        Ok(())
    }
}

/// He-style uniform init: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
pub fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut seed::Rng) -> ArrayD<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || T::of(rng.random_range(-bound..bound)))
}

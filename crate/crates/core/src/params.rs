//! Flat parameter vectors with a named tensor layout.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered manifest of the tensors packed into a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Layout {
    /// Packs the given `(name, shape)` list contiguously, in order.
    pub fn packed<S: Into<String>>(entries: impl IntoIterator<Item = (S, Vec<usize>)>) -> Self {
        let mut offset = 0;
        let tensors = entries
            .into_iter()
            .map(|(name, shape)| {
                let spec = TensorSpec { name: name.into(), shape, offset };
                offset += spec.len();
                spec
            })
            .collect();
        Layout { tensors, total: offset }
    }

    /// Checks that offsets are contiguous and cover the whole vector.
    pub fn validate(&self) -> Result<()> {
        let mut expected = 0;
        for t in &self.tensors {
            if t.offset != expected {
                return Err(Error::Schema(format!(
                    "tensor {} starts at {} but the previous tensor ends at {expected}",
                    t.name, t.offset
                )));
            }
            expected += t.len();
        }
        if expected != self.total {
            return Err(Error::Schema(format!("layout covers {expected} values but declares {}", self.total)));
        }
        Ok(())
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Name of the tensor containing flat index `i`.
    pub fn owner(&self, i: usize) -> Option<&str> {
        self.tensors.iter().find(|t| t.range().contains(&i)).map(|t| t.name.as_str())
    }
}

/// The flat parameter vector θ together with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
    layout: Arc<Layout>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(layout: Arc<Layout>, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::dim(
                "param_vector",
                format!("layout holds {} values, got {}", layout.total(), values.len()),
            ));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![T::zero(); layout.total()];
        ParamVector { values, layout }
    }

    /// A vector with the same layout and the given values.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        Self::new(self.layout.clone(), values)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|t| &self.values[t.range()])
    }

    pub fn cast<U: Scalar>(&self) -> ParamVector<U> {
        ParamVector { values: self.values.iter().map(|x| U::of(x.primal())).collect(), layout: self.layout.clone() }
    }

    pub fn dot(&self, other: &Self) -> T {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> T {
        self.values.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// `self += alpha · x`.
    pub fn axpy(&mut self, alpha: T, x: &Self) {
        axpy(&mut self.values, alpha, &x.values);
    }

    pub fn scaled(&self, alpha: T) -> Self {
        ParamVector { values: self.values.iter().map(|&v| v * alpha).collect(), layout: self.layout.clone() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect();
        ParamVector { values, layout: self.layout.clone() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a + b).collect();
        ParamVector { values, layout: self.layout.clone() }
    }

    /// First non-finite entry, reported as `(tensor name, flat index)`.
    pub fn first_non_finite(&self) -> Option<(String, usize)> {
        let i = self.values.iter().position(|x| !x.is_finite())?;
        Some((self.layout.owner(i).unwrap_or("?").to_string(), i))
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

pub fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

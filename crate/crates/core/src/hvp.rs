//! Hessian-vector products.
//!
//! Two routes are provided. [`HvpMethod::FdOfGrad`] takes central
//! differences of exact reverse-mode gradients along the (normalized)
//! direction. [`HvpMethod::DoubleBackward`] re-runs the reverse pass on dual
//! numbers whose tangent is the direction, which differentiates the gradient
//! exactly (forward-over-reverse).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Activation, Example, FeedForwardLm};
use crate::params::ParamVector;
use crate::scalar::{Dual, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvpMethod {
    #[default]
    FdOfGrad,
    DoubleBackward,
}

impl HvpMethod {
    pub fn name(self) -> &'static str {
        match self {
            HvpMethod::FdOfGrad => "fd_of_grad",
            HvpMethod::DoubleBackward => "double_backward",
        }
    }
}

/// A twice-differentiable scalar function of the parameters whose gradient
/// can be evaluated at any scalar type.
pub trait Objective: Sync {
    fn value_grad<T: Scalar>(&self, params: &ParamVector<T>) -> Result<(T, ParamVector<T>)>;
}

/// Mean batch loss of a model on a fixed set of examples.
pub struct BatchLoss<'a> {
    pub model: &'a FeedForwardLm,
    pub batch: &'a [Example],
}

impl Objective for BatchLoss<'_> {
    fn value_grad<T: Scalar>(&self, params: &ParamVector<T>) -> Result<(T, ParamVector<T>)> {
        self.model.loss_grad(params, self.batch)
    }
}

/// `H·v` for the Hessian of `objective` at `params`.
pub fn hvp<O: Objective, T: Scalar>(
    objective: &O,
    params: &ParamVector<T>,
    v: &ParamVector<T>,
    method: HvpMethod,
) -> Result<ParamVector<T>> {
    if v.len() != params.len() {
        return Err(Error::dim("hvp", format!("direction has {} entries, params {}", v.len(), params.len())));
    }
    let out = match method {
        HvpMethod::FdOfGrad => hvp_fd(objective, params, v)?,
        HvpMethod::DoubleBackward => hvp_dual(objective, params, v)?,
    };
    if let Some((name, i)) = out.first_non_finite() {
        return Err(Error::numerical(
            format!("hvp ({})", method.name()),
            format!("non-finite result in tensor {name} at index {i}"),
        ));
    }
    Ok(out)
}

fn hvp_fd<O: Objective, T: Scalar>(objective: &O, params: &ParamVector<T>, v: &ParamVector<T>) -> Result<ParamVector<T>> {
    let vn = v.norm();
    if !vn.is_finite() {
        return Err(Error::numerical("hvp (fd_of_grad)", "direction has non-finite norm"));
    }
    if vn == T::zero() {
        return Ok(params.zeros_like());
    }
    let eps = T::of(1e-4) * (T::one() + params.norm_inf());
    let u = v.scaled(T::one() / vn);
    let mut plus = params.clone();
    plus.axpy(eps, &u);
    let mut minus = params.clone();
    minus.axpy(-eps, &u);
    let (_, gp) = objective.value_grad(&plus)?;
    let (_, gm) = objective.value_grad(&minus)?;
    let k = vn / (eps + eps);
    let values = gp.values().iter().zip(gm.values()).map(|(&a, &b)| (a - b) * k).collect();
    params.with_values(values)
}

fn hvp_dual<O: Objective, T: Scalar>(objective: &O, params: &ParamVector<T>, v: &ParamVector<T>) -> Result<ParamVector<T>> {
    let values = params.values().iter().zip(v.values()).map(|(&p, &d)| Dual::new(p, d)).collect();
    let dual = ParamVector::new(params.layout().clone(), values)?;
    let (_, g) = objective.value_grad(&dual)?;
    params.with_values(g.values().iter().map(|d| d.du).collect())
}

/// A symmetric linear map on parameter space.
pub trait LinearOperator<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[T]) -> Result<Vec<T>>;
}

/// The loss Hessian of a model at fixed parameters on a fixed example set.
pub struct ModelHessian<'a, T> {
    model: &'a FeedForwardLm,
    params: &'a ParamVector<T>,
    batch: &'a [Example],
    method: HvpMethod,
}

impl<'a, T: Scalar> ModelHessian<'a, T> {
    pub fn new(model: &'a FeedForwardLm, params: &'a ParamVector<T>, batch: &'a [Example], method: HvpMethod) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::DegenerateBatch("Hessian sample is empty".into()));
        }
        if model.config().activation == Activation::Relu {
            log::warn!("Hessian-vector products on a relu model: the loss is not twice differentiable everywhere");
        }
        Ok(ModelHessian { model, params, batch, method })
    }
}

impl<T: Scalar> LinearOperator<T> for ModelHessian<'_, T> {
    fn dim(&self) -> usize {
        self.params.len()
    }

    fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        let obj = BatchLoss { model: self.model, batch: self.batch };
        let dir = self.params.with_values(v.to_vec())?;
        Ok(hvp(&obj, self.params, &dir, self.method)?.into_values())
    }
}

/// Dense symmetric matrix as an operator (row-major `n×n`).
pub struct DenseOperator<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseOperator<T> {
    pub fn new(n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::dim("dense_operator", format!("{} entries for a {n}×{n} matrix", data.len())));
        }
        Ok(DenseOperator { n, data })
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        let mut data = vec![T::zero(); n * n];
        for (i, &d) in diag.iter().enumerate() {
            data[i * n + i] = d;
        }
        DenseOperator { n, data }
    }
}

impl<T: Scalar> LinearOperator<T> for DenseOperator<T> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.n {
            return Err(Error::dim("dense_operator", "vector length"));
        }
        Ok(self.data.chunks(self.n).map(|row| crate::params::dot(row, v)).collect())
    }
}

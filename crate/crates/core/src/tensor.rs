//! Dense row-major tensors and the raw kernels the tape records.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn scalar(x: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![x] }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::dim("from_rows", "ragged rows"));
        }
        Ok(Tensor { shape: vec![m, n], data: rows.concat() })
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::dim("item", format!("tensor of shape {:?} is not a scalar", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn check_finite(&self, op: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::numerical(op, format!("non-finite value at flat index {i}"))),
        }
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::dim(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a[m×k] · b[k×n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::dim("matmul", format!("inner dimensions {k} and {k2} disagree")));
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a[m×n] · b[k×n]ᵀ`.
pub(crate) fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, n) = (a.shape[0], a.shape[1]);
    let k = b.shape[0];
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let arow = &a.data[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b.data[j * n..(j + 1) * n];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * k + j] = s;
        }
    }
    Tensor { shape: vec![m, k], data: out }
}

/// `a[m×k]ᵀ · b[m×n]`.
pub(crate) fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b.data[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor { shape: vec![k, n], data: out }
}

/// Numerically stable `ln Σ exp(row)`.
pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn transposed_kernels_agree_with_explicit_transpose() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![4, 3], (0..12).map(|x| x as f64 * 0.5).collect()).unwrap();
        let bt = Tensor::new(
            vec![3, 4],
            (0..3).flat_map(|j| (0..4).map(move |i| (i * 3 + j) as f64 * 0.5)).collect(),
        )
        .unwrap();
        assert_eq!(matmul_nt(&a, &b), matmul(&a, &bt).unwrap());

        let c = Tensor::new(vec![2, 4], (0..8).map(|x| x as f64).collect()).unwrap();
        let at = Tensor::new(vec![3, 2], vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
        assert_eq!(matmul_tn(&a, &c), matmul(&at, &c).unwrap());
    }

    #[test]
    fn log_sum_exp_saturates_without_overflow() {
        let v = log_sum_exp(&[1000.0, 0.0, 0.0]);
        assert_eq!(v, 1000.0);
    }
}

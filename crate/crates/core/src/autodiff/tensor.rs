use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`.
///
/// Scalars have an empty shape; matrices (rank 2) are what almost every
/// tape primitive works on.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; len] }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::shape(
                    "Tensor::from_rows",
                    format!("row {i} has {} columns, expected {cols}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row count of a matrix. Panics on non-matrices.
    pub fn rows(&self) -> usize {
        assert_eq!(self.rank(), 2, "rows() on a rank-{} tensor", self.rank());
        self.shape[0]
    }

    /// Column count of a matrix. Panics on non-matrices.
    pub fn cols(&self) -> usize {
        assert_eq!(self.rank(), 2, "cols() on a rank-{} tensor", self.rank());
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// The single value of a scalar or one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a tensor with {} values", self.data.len());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Selects rows by index into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor { shape: vec![idx.len(), c], data }
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor { shape: vec![c, r], data }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor").field("shape", &self.shape).field("data", &self.data).finish()
    }
}

/// `a (m×k) · b (k×n)` into a fresh `m×n` buffer.
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm_into(a, false, b, false, m, k, n, &mut c);
    c
}

/// `c += op(a) · op(b)` where `op` optionally transposes; `m, k, n` are the
/// dimensions after transposition.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into(
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    m: usize,
    k: usize,
    n: usize,
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // Row-major strides; a transposed operand just swaps them.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(vec![], vec![1.5]).unwrap().item(), 1.5);
    }

    #[test]
    fn gemm_matches_naive_loops() {
        let a: Vec<f64> = (0..6).map(|x| x as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..12).map(|x| (x as f64).sin()).collect();
        let c = gemm(&a, &b, 2, 3, 4);
        for i in 0..2 {
            for j in 0..4 {
                let expect: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert!((c[i * 4 + j] - expect).abs() < 1e-14);
            }
        }
        // aᵀ stored as 3×2
        let at = Tensor::matrix(2, 3, a.clone()).unwrap().transpose();
        let mut c2 = vec![0.0; 8];
        gemm_into(at.data(), true, &b, false, 2, 3, 4, &mut c2);
        assert_eq!(c, c2);
    }
}

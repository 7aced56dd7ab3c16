//! Dense real tensors, split-storage complex matrices, and the reverse-mode
//! differentiation tape.
//!
//! Complex quantities are stored as separate real/imaginary tensors so that
//! the tape in [`tape`] only ever differentiates real-valued operations;
//! complex arithmetic is expanded into real compositions at the call site.

pub mod solve;
pub mod tape;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Row-major dense tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealTensor {
    /// Build a tensor from a shape and row-major data. Panics if the data
    /// length does not match the shape product.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let expected: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            expected,
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    /// 1-element tensor holding a scalar.
    pub fn scalar(x: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![x],
        }
    }

    /// 2-D tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::new(vec![rows, cols], data)
    }

    /// Column vector of length `n`.
    pub fn column(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(vec![n, 1], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() requires a 2-D tensor");
        self.shape[0]
    }

    /// Number of columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() requires a 2-D tensor");
        self.shape[1]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, x: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = x;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Sum of all entries.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Complex matrix stored as separate real and imaginary tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    re: RealTensor,
    im: RealTensor,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            re: RealTensor::zeros(vec![rows, cols]),
            im: RealTensor::zeros(vec![rows, cols]),
        }
    }

    /// Build from split parts; both tensors must share the given 2-D shape.
    pub fn from_parts(re: RealTensor, im: RealTensor) -> Self {
        assert_eq!(re.shape(), im.shape(), "re/im shapes differ");
        assert_eq!(re.shape().len(), 2, "complex matrix parts must be 2-D");
        let rows = re.rows();
        let cols = re.cols();
        Self { rows, cols, re, im }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Complex64::new(1.0, 0.0));
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, f(r, c));
            }
        }
        m
    }

    /// Column vector from a slice of complex entries.
    pub fn column_from(entries: &[Complex64]) -> Self {
        Self::from_fn(entries.len(), 1, |r, _| entries[r])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn re(&self) -> &RealTensor {
        &self.re
    }

    pub fn im(&self) -> &RealTensor {
        &self.im
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        Complex64::new(self.re.get(r, c), self.im.get(r, c))
    }

    pub fn set(&mut self, r: usize, c: usize, z: Complex64) {
        self.re.set(r, c, z.re);
        self.im.set(r, c, z.im);
    }

    /// Standard complex matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..self.cols {
                    acc += self.get(r, k) * other.get(k, c);
                }
                out.set(r, c, acc);
            }
        }
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn hermitian(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r).conj())
    }

    pub fn conj(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |r, c| self.get(r, c).conj())
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self::from_fn(self.rows, self.cols, |r, c| self.get(r, c) + other.get(r, c))
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self::from_fn(self.rows, self.cols, |r, c| self.get(r, c) - other.get(r, c))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(self.rows, self.cols, |r, c| self.get(r, c) * s)
    }

    pub fn scale_complex(&self, s: Complex64) -> Self {
        Self::from_fn(self.rows, self.cols, |r, c| self.get(r, c) * s)
    }

    /// Scale row `l` by `v[l]`; `v` must be a column vector with one entry
    /// per row. This is `diag(v) * self`.
    pub fn scale_rows(&self, v: &Self) -> Self {
        assert_eq!(v.cols, 1);
        assert_eq!(v.rows, self.rows);
        Self::from_fn(self.rows, self.cols, |r, c| v.get(r, 0) * self.get(r, c))
    }

    pub fn col(&self, c: usize) -> Self {
        Self::from_fn(self.rows, 1, |r, _| self.get(r, c))
    }

    pub fn set_col(&mut self, c: usize, v: &Self) {
        assert_eq!(v.cols, 1);
        assert_eq!(v.rows, self.rows);
        for r in 0..self.rows {
            self.set(r, c, v.get(r, 0));
        }
    }

    /// Rows `start..start + count` as a new matrix.
    pub fn row_block(&self, start: usize, count: usize) -> Self {
        assert!(start + count <= self.rows);
        Self::from_fn(count, self.cols, |r, c| self.get(start + r, c))
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn stack_rows(blocks: &[&Self]) -> Self {
        assert!(!blocks.is_empty());
        let cols = blocks[0].cols;
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let mut out = Self::zeros(rows, cols);
        let mut at = 0;
        for b in blocks {
            assert_eq!(b.cols, cols);
            for r in 0..b.rows {
                for c in 0..cols {
                    out.set(at + r, c, b.get(r, c));
                }
            }
            at += b.rows;
        }
        out
    }

    /// Sum of squared magnitudes of all entries.
    pub fn norm_sqr(&self) -> f64 {
        let mut acc = 0.0;
        for (re, im) in self.re.data().iter().zip(self.im.data().iter()) {
            acc += re * re + im * im;
        }
        acc
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.re.all_finite() && self.im.all_finite()
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        let mut best: f64 = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                best = best.max(self.get(r, c).norm());
            }
        }
        best
    }

    /// Largest entry-wise difference `|self - other|`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut best: f64 = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                best = best.max((self.get(r, c) - other.get(r, c)).norm());
            }
        }
        best
    }
}

/// Hermitian inner product `a^H b` of two column vectors.
pub fn herm_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    assert_eq!(a.cols(), 1);
    assert_eq!(b.cols(), 1);
    assert_eq!(a.rows(), b.rows());
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..a.rows() {
        acc += a.get(r, 0).conj() * b.get(r, 0);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> ComplexMatrix {
        // Cheap deterministic fill; adequacy over statistical quality.
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        ComplexMatrix::from_fn(rows, cols, |_, _| Complex64::new(next(), next()))
    }

    #[test]
    fn identity_times_matrix_is_matrix() {
        let a = random_matrix(2, 3, 7);
        let i2 = ComplexMatrix::identity(2);
        let prod = i2.matmul(&a).unwrap();
        assert!(prod.max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn j_times_j_is_minus_one() {
        let j = ComplexMatrix::from_fn(1, 1, |_, _| Complex64::new(0.0, 1.0));
        let prod = j.matmul(&j).unwrap();
        assert!((prod.get(0, 0) - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let a = random_matrix(3, 2, 1);
        let b = random_matrix(2, 4, 2);
        let prod = a.matmul(&b).unwrap();
        // Independent naive oracle.
        for r in 0..3 {
            for c in 0..4 {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..2 {
                    acc += a.get(r, k) * b.get(k, c);
                }
                assert!((prod.get(r, c) - acc).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let a = random_matrix(3, 2, 3);
        let b = random_matrix(3, 2, 4);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_associativity() {
        let a = random_matrix(3, 4, 5);
        let b = random_matrix(4, 2, 6);
        let c = random_matrix(2, 5, 7);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        assert!(left.max_abs_diff(&right) < 1e-10);
    }

    #[test]
    fn hermitian_inner_product() {
        let a = ComplexMatrix::column_from(&[Complex64::new(1.0, 2.0), Complex64::new(0.0, -1.0)]);
        let b = ComplexMatrix::column_from(&[Complex64::new(3.0, 0.0), Complex64::new(1.0, 1.0)]);
        // (1-2j)*3 + (j)*(1+j) = 3 - 6j + j - 1 = 2 - 5j
        let got = herm_inner(&a, &b);
        assert!((got - Complex64::new(2.0, -5.0)).norm() < 1e-14);
    }
}

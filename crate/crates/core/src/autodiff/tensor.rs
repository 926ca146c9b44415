use std::fmt;

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor.
///
/// The engine works on matrices; vectors are `1 x n` rows and scalars are
/// `1 x 1`. Higher-rank shapes can be stored but only elementwise ops
/// accept them.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(dim_err!(
                "shape {:?} holds {} elements, got {}",
                shape,
                numel,
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(dim_err!("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::matrix(rows.len(), cols, data)
    }

    pub fn row_vector(data: Vec<T>) -> Self {
        let n = data.len();
        Self {
            shape: vec![1, n],
            data,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, T::zero())
    }

    pub fn full(rows: usize, cols: usize, v: T) -> Self {
        Self {
            shape: vec![rows, cols],
            data: vec![v; rows * cols],
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            shape: other.shape.clone(),
            data: vec![T::zero(); other.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Row count of a matrix (or 1 for lower rank).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            n => self.shape[..n - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(dim_err!("expected a scalar, got shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(dim_err!(
                "shape mismatch {:?} vs {:?}",
                self.shape,
                other.shape
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += other`, same shape.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(dim_err!(
                "shape mismatch {:?} vs {:?}",
                self.shape,
                other.shape
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, k: T) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Plain matrix product, outside any graph.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if !self.is_matrix() || !other.is_matrix() || self.cols() != other.rows() {
            return Err(dim_err!(
                "matmul {:?} x {:?}",
                self.shape,
                other.shape
            ));
        }
        let (m, k, n) = (self.rows(), self.cols(), other.cols());
        let mut out = Self::zeros(m, n);
        T::gemm(
            m,
            k,
            n,
            &self.data,
            k as isize,
            1,
            &other.data,
            n as isize,
            1,
            T::zero(),
            &mut out.data,
        );
        Ok(out)
    }

    pub fn transpose(&self) -> Result<Self> {
        if !self.is_matrix() {
            return Err(dim_err!("transpose of non-matrix {:?}", self.shape));
        }
        let (r, c) = (self.rows(), self.cols());
        let mut out = Self::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    /// Rows `[start, start + len)`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        if !self.is_matrix() || start + len > self.rows() {
            return Err(dim_err!(
                "row slice {}..{} of {:?}",
                start,
                start + len,
                self.shape
            ));
        }
        let c = self.cols();
        Self::matrix(len, c, self.data[start * c..(start + len) * c].to_vec())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    /// Little-endian bytes of the data, for hashing and checkpoints.
    pub fn le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * T::DTYPE.size());
        for &v in &self.data {
            v.write_le(&mut out);
        }
        out
    }
}

impl<T: Scalar> TryFrom<(usize, usize, &[f64])> for Tensor<T> {
    type Error = Error;

    fn try_from((rows, cols, data): (usize, usize, &[f64])) -> Result<Self> {
        Self::matrix(rows, cols, data.iter().map(|&v| T::c(v)).collect())
    }
}

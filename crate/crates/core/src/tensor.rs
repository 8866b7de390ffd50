//! Minimal row-major dense tensor used for likelihood, transition and
//! concentration arrays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::LengthMismatch {
                expected: len,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Flat offset of a multi-index. Panics on rank mismatch or out-of-range
    /// coordinates.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "rank mismatch");
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {i} out of range for axis of size {d}");
            off = off * d + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Size of the leading axis (observations for A, next state for B).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Product of all trailing axes: the number of "columns" when the
    /// tensor is viewed as `[rows, rest]`.
    pub fn columns(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum over the leading axis for column `col` of the `[rows, rest]` view.
    pub fn column_sum(&self, col: usize) -> f64 {
        let cols = self.columns();
        (0..self.rows()).map(|r| self.data[r * cols + col]).sum()
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        let cols = self.columns();
        (0..self.rows()).map(|r| self.data[r * cols + col]).collect()
    }
}

/// Decode a flat row-major index over `dims` into a multi-index.
pub fn unravel(mut flat: usize, dims: &[usize], out: &mut [usize]) {
    for (slot, &d) in out.iter_mut().zip(dims).rev() {
        *slot = flat % d;
        flat /= d;
    }
}

//! Sparse vectors over a fixed dimension.

use crate::error::{Error, Result};

/// Index/value pairs over a dimension `dim`, indices strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVec {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVec {
    pub fn new(dim: usize, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::input("index and value lists differ in length"));
        }
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::input("indices must be strictly increasing"));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= dim {
                return Err(Error::input(format!("index {last} out of range for dimension {dim}")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite value"));
        }
        Ok(SparseVec { dim, indices, values })
    }

    pub fn zeros(dim: usize) -> Self {
        SparseVec { dim, indices: Vec::new(), values: Vec::new() }
    }

    /// Keeps the nonzero entries of `dense`.
    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        SparseVec { dim: dense.len(), indices, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        debug_assert_eq!(dense.len(), self.dim);
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    /// Merge-based inner product of two sparse vectors.
    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    pub fn scaled(&self, factor: f64) -> SparseVec {
        SparseVec {
            dim: self.dim,
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Multiplies entry `i` by `factors[i]`.
    pub fn scaled_by(&self, factors: &[f64]) -> SparseVec {
        SparseVec {
            dim: self.dim,
            indices: self.indices.clone(),
            values: self.iter().map(|(i, v)| v * factors[i]).collect(),
        }
    }

    /// `dense += alpha * self`
    pub fn axpy_into(&self, alpha: f64, dense: &mut [f64]) {
        debug_assert_eq!(dense.len(), self.dim);
        for (i, v) in self.iter() {
            dense[i] += alpha * v;
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.axpy_into(1.0, &mut out);
        out
    }
}

//! Sketched Newton learners whose per-round cost scales with the number of
//! nonzeros of the example rather than the dimension.
//!
//! Both keep the eigenvector estimate factored as `V = F Z` with a small
//! `F` and a tall `Z` that only changes along the coordinates of incoming
//! vectors, and split the weights as `w = w_bar + Z^T b`.

pub mod fd;
pub mod oja;

pub use fd::SparseFdSon;
pub use oja::SparseOjaSon;

use crate::linalg::{Mat, SymMatrix};
use crate::sparse_vec::SparseVec;

/// Condition number of `F` above which the factorization is folded back
/// into `Z`. Gram-Schmidt in the metric `K = Z Z^T` loses about
/// `cond(F)^2` in relative accuracy.
pub const REBASE_CONDITION: f64 = 1e3;

/// An `m x d` matrix stored coordinate-major, so that the `m` entries of
/// each coordinate are adjacent. Every access through a sparse vector adds
/// to a touch counter.
#[derive(Clone, Debug)]
pub(crate) struct Factor {
    m: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Factor {
    /// The first `m` standard basis rows.
    pub fn basis(m: usize, dim: usize) -> Self {
        let mut data = vec![0.0; m * dim];
        for i in 0..m {
            data[i * m + i] = 1.0;
        }
        Factor { m, dim, data }
    }

    pub fn from_mat(z: &Mat) -> Self {
        let (m, dim) = (z.rows(), z.cols());
        let mut data = vec![0.0; m * dim];
        for i in 0..m {
            for j in 0..dim {
                data[j * m + i] = z[(i, j)];
            }
        }
        Factor { m, dim, data }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.m..(j + 1) * self.m]
    }

    /// `Z x`
    pub fn mul_sparse(&self, x: &SparseVec, touches: &mut u64) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (j, v) in x.iter() {
            for (o, z) in out.iter_mut().zip(self.col(j)) {
                *o += v * z;
            }
        }
        *touches += (self.m * x.nnz()) as u64;
        out
    }

    /// `Z += delta g^T`
    pub fn add_outer(&mut self, delta: &[f64], g: &SparseVec, touches: &mut u64) {
        let m = self.m;
        for (j, v) in g.iter() {
            for (z, d) in self.data[j * m..(j + 1) * m].iter_mut().zip(delta) {
                *z += d * v;
            }
        }
        *touches += (m * g.nnz()) as u64;
    }

    /// `out += Z^T b`, touching every coordinate.
    pub fn add_tr_mul(&self, b: &[f64], out: &mut [f64], touches: &mut u64) {
        for (j, o) in out.iter_mut().enumerate() {
            *o += crate::linalg::dot(self.col(j), b);
        }
        *touches += (self.m * self.dim) as u64;
    }

    /// `Z Z^T`, touching every coordinate.
    pub fn gram(&self, touches: &mut u64) -> SymMatrix {
        let m = self.m;
        let mut k = SymMatrix::zeros(m);
        for j in 0..self.dim {
            let c = self.col(j);
            for a in 0..m {
                for b in a..m {
                    k.add_to(a, b, c[a] * c[b]);
                }
            }
        }
        *touches += (m * self.dim) as u64;
        k
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_fn(self.m, self.dim, |i, j| self.data[j * self.m + i])
    }
}

/// Counters describing the internal work of a sparse learner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SparseStats {
    /// Reads and writes of dimension-indexed storage.
    pub coordinate_touches: u64,
    /// Times the factorization was folded back into `Z` at `O(m d)` cost.
    pub rebases: u64,
    /// Rounds whose projection denominator vanished.
    pub degenerate_rounds: u64,
}

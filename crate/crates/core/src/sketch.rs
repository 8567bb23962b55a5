//! The `(S, H)` interface a sketched Newton learner needs from a sketcher.

use crate::error::{Error, Result};
use crate::linalg::{inverse_checked, Mat};
use crate::sparse_vec::SparseVec;

/// A low-rank sketch `S` of the to-sketch vectors seen so far, together
/// with `H = (alpha I + S S^T)^{-1}`.
pub trait Sketch {
    fn dim(&self) -> usize;

    /// Number of rows of `S`.
    fn rows(&self) -> usize;

    fn alpha(&self) -> f64;

    fn update(&mut self, g_hat: &SparseVec) -> Result<()>;

    /// `S x`
    fn project(&self, x: &SparseVec) -> Vec<f64>;

    /// `H v`
    fn apply_h(&self, v: &[f64]) -> Vec<f64>;

    /// `out += scale * S^T v`
    fn lift(&self, v: &[f64], scale: f64, out: &mut [f64]);

    fn sketch_matrix(&self) -> Mat;

    fn h_matrix(&self) -> Mat;
}

/// The zero-row sketch: `A = alpha I`.
#[derive(Clone, Debug)]
pub struct EmptySketch {
    dim: usize,
    alpha: f64,
}

impl EmptySketch {
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {alpha}")));
        }
        Ok(EmptySketch { dim, alpha })
    }
}

impl Sketch for EmptySketch {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rows(&self) -> usize {
        0
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn update(&mut self, g_hat: &SparseVec) -> Result<()> {
        check_dim(self.dim, g_hat)
    }

    fn project(&self, _x: &SparseVec) -> Vec<f64> {
        Vec::new()
    }

    fn apply_h(&self, _v: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    fn lift(&self, _v: &[f64], _scale: f64, _out: &mut [f64]) {}

    fn sketch_matrix(&self) -> Mat {
        Mat::zeros(0, self.dim)
    }

    fn h_matrix(&self) -> Mat {
        Mat::zeros(0, 0)
    }
}

/// Keeps every to-sketch vector as a row, so `S^T S` is the exact sum of
/// outer products. Cost grows with the stream; meant for small reference
/// runs.
#[derive(Clone, Debug)]
pub struct ExactSketch {
    alpha: f64,
    s: Mat,
    h: Mat,
}

impl ExactSketch {
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {alpha}")));
        }
        Ok(ExactSketch { alpha, s: Mat::zeros(0, dim), h: Mat::zeros(0, 0) })
    }

    /// A fixed sketch with explicit `S`; `H` is computed directly.
    pub fn from_matrix(alpha: f64, s: Mat) -> Result<Self> {
        let mut sk = ExactSketch::new(alpha, s.cols())?;
        sk.s = s;
        sk.refresh_h()?;
        Ok(sk)
    }

    fn refresh_h(&mut self) -> Result<()> {
        let m = self.s.rows();
        let mut a = self.s.gram_rows().into_mat();
        for i in 0..m {
            a[(i, i)] += self.alpha;
        }
        self.h = inverse_checked(&a, 1e14)?;
        Ok(())
    }
}

impl Sketch for ExactSketch {
    fn dim(&self) -> usize {
        self.s.cols()
    }

    fn rows(&self) -> usize {
        self.s.rows()
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn update(&mut self, g_hat: &SparseVec) -> Result<()> {
        check_dim(self.dim(), g_hat)?;
        let mut rows: Vec<Vec<f64>> = (0..self.s.rows()).map(|i| self.s.row(i).to_vec()).collect();
        rows.push(g_hat.to_dense());
        self.s = Mat::from_rows(&rows);
        self.refresh_h()
    }

    fn project(&self, x: &SparseVec) -> Vec<f64> {
        (0..self.s.rows()).map(|i| x.dot_dense(self.s.row(i))).collect()
    }

    fn apply_h(&self, v: &[f64]) -> Vec<f64> {
        self.h.mul_vec(v)
    }

    fn lift(&self, v: &[f64], scale: f64, out: &mut [f64]) {
        for (i, vi) in v.iter().enumerate() {
            crate::linalg::axpy(scale * vi, self.s.row(i), out);
        }
    }

    fn sketch_matrix(&self) -> Mat {
        self.s.clone()
    }

    fn h_matrix(&self) -> Mat {
        self.h.clone()
    }
}

pub(crate) fn check_dim(dim: usize, v: &SparseVec) -> Result<()> {
    if v.dim() != dim {
        return Err(Error::input(format!("vector has dimension {}, expected {dim}", v.dim())));
    }
    Ok(())
}

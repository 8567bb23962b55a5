//! Small dense linear algebra: a row-major matrix, a cyclic Jacobi
//! eigensolver, Gram-Schmidt under a Gram-matrix inner product, and LU
//! inversion for the `m x m` factors carried by the sparse sketches.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Residual norms at or below this fraction of a row's norm count as zero
/// in Gram-Schmidt.
pub const EPS_RANK: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Mat::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    /// Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Mat { rows: rows.len(), cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self^T v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len());
        let mut out = vec![0.0; self.cols];
        for (i, vi) in v.iter().enumerate() {
            axpy(*vi, self.row(i), &mut out);
        }
        out
    }

    /// `self self^T`
    pub fn gram_rows(&self) -> SymMatrix {
        let mut g = Mat::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in i..self.rows {
                let v = dot(self.row(i), self.row(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        SymMatrix(g)
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * s).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Keeps the listed columns, in order.
    pub fn select_cols(&self, cols: &[usize]) -> Mat {
        Mat::from_fn(self.rows, cols.len(), |i, j| self[(i, cols[j])])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Square symmetric matrix; every write goes to both triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Mat);

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix(Mat::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Mat::identity(n))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        SymMatrix(Mat::from_diag(diag))
    }

    /// Symmetrizes `m` as `(m + m^T) / 2` after checking it is square and
    /// symmetric to a relative tolerance of `1e-9`.
    pub fn from_mat(m: Mat) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::input(format!("matrix is {}x{}, not square", m.rows, m.cols)));
        }
        let scale = m.frobenius_norm().max(1.0);
        let n = m.rows;
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if (a - b).abs() > 1e-9 * scale {
                    return Err(Error::input(format!("matrix not symmetric at ({i}, {j})")));
                }
                let v = 0.5 * (a + b);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(SymMatrix(out))
    }

    pub fn n(&self) -> usize {
        self.0.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.0[(i, j)] = v;
        self.0[(j, i)] = v;
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.0[(i, j)] += v;
        if i != j {
            self.0[(j, i)] += v;
        }
    }

    /// `self += scale * v v^T`
    pub fn rank_one_update(&mut self, scale: f64, v: &[f64]) {
        let n = self.n();
        for i in 0..n {
            for j in i..n {
                self.add_to(i, j, scale * v[i] * v[j]);
            }
        }
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.0.mul_vec(v)
    }

    pub fn quad_form(&self, v: &[f64]) -> f64 {
        dot(v, &self.0.mul_vec(v))
    }

    pub fn trace(&self) -> f64 {
        (0..self.n()).map(|i| self.get(i, i)).sum()
    }
}

/// The `k` leading eigenpairs of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct EigPairs {
    /// Descending.
    pub values: Vec<f64>,
    /// One unit-norm eigenvector per row.
    pub vectors: Mat,
}

/// Top-`k` eigenpairs of `b`. Runs cyclic Jacobi sweeps on the whole matrix,
/// sorts eigenvalues descending (ties keep their diagonal order) and flips
/// each eigenvector so that its first entry above `1e-12` in magnitude is
/// positive.
pub fn top_k_eig(b: &SymMatrix, k: usize) -> Result<EigPairs> {
    let n = b.n();
    if k > n {
        return Err(Error::input(format!("requested {k} eigenpairs of a {n}x{n} matrix")));
    }
    if !b.0.is_finite() {
        return Err(Error::input("matrix has non-finite entries"));
    }
    let (diag, vecs) = jacobi(b);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]));
    order.truncate(k);

    let mut vectors = Mat::zeros(k, n);
    let mut values = Vec::with_capacity(k);
    for (r, &col) in order.iter().enumerate() {
        values.push(diag[col]);
        let row = vectors.row_mut(r);
        for (i, x) in row.iter_mut().enumerate() {
            *x = vecs[(i, col)];
        }
        if let Some(first) = row.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                row.iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
    Ok(EigPairs { values, vectors })
}

/// Full eigendecomposition, same conventions as [`top_k_eig`].
pub fn eig_sym(b: &SymMatrix) -> Result<EigPairs> {
    top_k_eig(b, b.n())
}

/// Returns the diagonal after convergence and the accumulated rotations
/// (eigenvectors in columns).
fn jacobi(b: &SymMatrix) -> (Vec<f64>, Mat) {
    let n = b.n();
    let mut a = b.0.clone();
    let mut v = Mat::identity(n);
    let fro = a.frobenius_norm();
    if fro == 0.0 {
        return (vec![0.0; n], v);
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * fro {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// Gram-Schmidt on the rows of `p` under the inner product
/// `<a, b> = a^T K b` where `K = R R^T` is the Gram matrix of some `R`.
///
/// Returns `(L, Q)` with `L Q R = P R` and the rows of `Q R` orthonormal,
/// i.e. `Q K Q^T = I_r`, where `r` is the numerical rank of `P R`. Rows of
/// `P` whose residual falls below [`EPS_RANK`] times their own `K`-norm are
/// treated as dependent and leave no row in `Q`.
pub fn decompose(p: &Mat, k: &SymMatrix) -> Result<(Mat, Mat)> {
    if p.cols() != k.n() {
        return Err(Error::input(format!(
            "P has {} columns but K is {}x{}",
            p.cols(),
            k.n(),
            k.n()
        )));
    }
    if !p.is_finite() || !k.as_mat().is_finite() {
        return Err(Error::input("non-finite entries in decompose"));
    }
    if (0..k.n()).any(|i| k.get(i, i) < 0.0) {
        return Err(Error::input("K is not positive semidefinite (negative diagonal)"));
    }
    gram_schmidt(p, |v| k.mul_vec(v))
}

/// Euclidean Gram-Schmidt on the rows of `p`: `(L, Q)` with `L Q = P` and
/// the rows of `Q` orthonormal.
pub fn orthonormalize_rows(p: &Mat) -> (Mat, Mat) {
    gram_schmidt(p, |v| v.to_vec()).expect("identity Gram matrix is positive definite")
}

/// Two-pass classical Gram-Schmidt. `apply_k` multiplies by the Gram matrix.
fn gram_schmidt(p: &Mat, apply_k: impl Fn(&[f64]) -> Vec<f64>) -> Result<(Mat, Mat)> {
    let (m, n) = (p.rows(), p.cols());
    let mut l = Mat::zeros(m, m);
    let mut q = Mat::zeros(m, n);
    let mut kept = Vec::with_capacity(m);

    for i in 0..m {
        let row = p.row(i);
        let kp = apply_k(row);
        let p_norm_sq = dot(row, &kp);
        let scale: f64 = row.iter().zip(&kp).map(|(a, b)| (a * b).abs()).sum();
        if p_norm_sq < -1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::input("K is not positive semidefinite"));
        }

        let mut beta = row.to_vec();
        let mut coeff = vec![0.0; m];
        let mut k_beta = kp;
        for _pass in 0..2 {
            let proj: Vec<f64> = kept.iter().map(|&j| dot(q.row(j), &k_beta)).collect();
            for (&j, a) in kept.iter().zip(&proj) {
                coeff[j] += a;
                axpy(-a, q.row(j), &mut beta);
            }
            k_beta = apply_k(&beta);
        }
        let c_sq = dot(&beta, &k_beta);
        if c_sq < -1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::input("K is not positive semidefinite"));
        }
        let c = c_sq.max(0.0).sqrt();
        if c > EPS_RANK * p_norm_sq.max(0.0).sqrt() && c > 0.0 {
            for (dst, b) in q.row_mut(i).iter_mut().zip(&beta) {
                *dst = b / c;
            }
            coeff[i] = c;
            kept.push(i);
        }
        l.row_mut(i).copy_from_slice(&coeff);
    }

    let l = l.select_cols(&kept);
    let q = Mat::from_fn(kept.len(), n, |r, j| q[(kept[r], j)]);
    Ok((l, q))
}

/// LU factorization with partial pivoting of a small square matrix.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Mat,
    perm: Vec<usize>,
    norm1: f64,
}

impl Lu {
    pub fn new(a: &Mat) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::input("LU needs a square matrix"));
        }
        let norm1 = (0..n).map(|j| (0..n).map(|i| a[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| lu[(i, col)].abs().total_cmp(&lu[(j, col)].abs()))
                .expect("non-empty range");
            if lu[(pivot, col)] == 0.0 {
                return Err(Error::degenerate("singular matrix in LU"));
            }
            if pivot != col {
                perm.swap(pivot, col);
                for j in 0..n {
                    let tmp = lu[(pivot, j)];
                    lu[(pivot, j)] = lu[(col, j)];
                    lu[(col, j)] = tmp;
                }
            }
            let d = lu[(col, col)];
            for i in col + 1..n {
                let f = lu[(i, col)] / d;
                lu[(i, col)] = f;
                for j in col + 1..n {
                    lu[(i, j)] -= f * lu[(col, j)];
                }
            }
        }
        Ok(Lu { lu, perm, norm1 })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[(i, j)] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[(i, j)] * x[j];
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }

    pub fn inverse(&self) -> Mat {
        let n = self.lu.rows();
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }

    /// 1-norm condition number, from the explicit inverse.
    pub fn condition(&self) -> f64 {
        let inv = self.inverse();
        let n = inv.rows();
        let inv_norm = (0..n).map(|j| (0..n).map(|i| inv[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max);
        self.norm1 * inv_norm
    }
}

/// Inverse of a small square matrix; refuses condition numbers above
/// `max_condition`.
pub fn inverse_checked(a: &Mat, max_condition: f64) -> Result<Mat> {
    if a.rows() == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let lu = Lu::new(a)?;
    let cond = lu.condition();
    if !(cond <= max_condition) {
        return Err(Error::degenerate(format!("condition number {cond:.3e} exceeds {max_condition:.1e}")));
    }
    Ok(lu.inverse())
}

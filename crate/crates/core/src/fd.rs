//! Frequent Directions: the per-round sketch, the epoch variant with a
//! doubled sketch, and the reduction of the epoch eigenproblem to a small
//! matrix.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, orthonormalize_rows, top_k_eig, Mat, SymMatrix};
use crate::sketch::{check_dim, Sketch};
use crate::sparse_vec::SparseVec;

/// Shrinkage bookkeeping: `rho` is the smallest eigenvalue removed by each
/// eigen step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FdDiagnostics {
    pub cumulative_shrink: f64,
    pub rho: Vec<f64>,
}

impl FdDiagnostics {
    fn record(&mut self, rho: f64) {
        self.cumulative_shrink += rho;
        self.rho.push(rho);
    }
}

fn check_params(alpha: f64, m: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!("alpha must be positive, got {alpha}")));
    }
    if m < 2 {
        return Err(Error::config(format!("FD needs a sketch size of at least 2, got {m}")));
    }
    Ok(())
}

/// Per-round Frequent Directions. The last row of `S` is zero between
/// updates and the rows are mutually orthogonal, so `H` is diagonal.
#[derive(Clone, Debug)]
pub struct FdSketch {
    alpha: f64,
    s: Mat,
    h: Vec<f64>,
    diagnostics: FdDiagnostics,
}

impl FdSketch {
    pub fn new(alpha: f64, m: usize, dim: usize) -> Result<Self> {
        check_params(alpha, m)?;
        Ok(FdSketch { alpha, s: Mat::zeros(m, dim), h: vec![1.0 / alpha; m], diagnostics: FdDiagnostics::default() })
    }

    pub fn m(&self) -> usize {
        self.s.rows()
    }

    pub fn h_diag(&self) -> &[f64] {
        &self.h
    }

    pub fn diagnostics(&self) -> &FdDiagnostics {
        &self.diagnostics
    }
}

impl Sketch for FdSketch {
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
        let m = self.m();
        let last = self.s.row_mut(m - 1);
        last.iter_mut().for_each(|v| *v = 0.0);
        g_hat.axpy_into(1.0, last);

        // Eigenpairs of S^T S via the m x m Gram matrix: if S S^T u = s u
        // then S^T u / sqrt(s) is a unit eigenvector of S^T S.
        let eig = top_k_eig(&self.s.gram_rows(), m)?;
        let sigma: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
        let rho = sigma[m - 1];
        let mut s = Mat::zeros(m, self.dim());
        for i in 0..m {
            let shrunk = sigma[i] - rho;
            if shrunk > 0.0 {
                let coef = (shrunk / sigma[i]).sqrt();
                let combo = self.s.tr_mul_vec(eig.vectors.row(i));
                axpy(coef, &combo, s.row_mut(i));
            }
            self.h[i] = 1.0 / (self.alpha + shrunk);
        }
        self.s = s;
        self.diagnostics.record(rho);
        Ok(())
    }

    fn project(&self, x: &SparseVec) -> Vec<f64> {
        (0..self.rows()).map(|i| x.dot_dense(self.s.row(i))).collect()
    }

    fn apply_h(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.h).map(|(a, b)| a * b).collect()
    }

    fn lift(&self, v: &[f64], scale: f64, out: &mut [f64]) {
        for (i, vi) in v.iter().enumerate() {
            if *vi != 0.0 {
                axpy(scale * vi, self.s.row(i), out);
            }
        }
    }

    fn sketch_matrix(&self) -> Mat {
        self.s.clone()
    }

    fn h_matrix(&self) -> Mat {
        Mat::from_diag(&self.h)
    }
}

/// Top-`m` eigenpairs of `S^T S` for `S = [D V; G]` with orthonormal rows
/// in `V`, computed through an `(m + r) x (m + r)` matrix where `r` is the
/// rank of the part of `G` outside `span(V)`. Returns `(V', Sigma)`.
pub fn compute_eigensystem(d: &[f64], v: &Mat, g: &Mat) -> Result<(Mat, Vec<f64>)> {
    let m = d.len();
    if v.rows() != m || v.cols() != g.cols() {
        return Err(Error::input("compute_eigensystem: shape mismatch between D, V and G"));
    }
    let mm = g.matmul(&v.transpose());
    let resid = g.sub(&mm.matmul(v));
    let (l, q) = orthonormalize_rows(&resid);
    let r = q.rows();

    let n = m + r;
    let ml = Mat::from_fn(g.rows(), n, |i, j| if j < m { mm[(i, j)] } else { l[(i, j - m)] });
    let mut c = ml.transpose().matmul(&ml);
    for i in 0..m {
        c[(i, i)] += d[i] * d[i];
    }
    let eig = top_k_eig(&SymMatrix::from_mat(c)?, m.min(n))?;

    let basis = Mat::from_fn(n, v.cols(), |i, j| if i < m { v[(i, j)] } else { q[(i - m, j)] });
    let v_new = eig.vectors.matmul(&basis);
    Ok((v_new, eig.values.iter().map(|x| x.max(0.0)).collect()))
}

/// Frequent Directions with a `2m`-row sketch `[D V; G]` that buffers `m`
/// recent vectors in `G` and only eigendecomposes when the buffer fills.
#[derive(Clone, Debug)]
pub struct EpochFdSketch {
    alpha: f64,
    /// Vectors already inserted in the current epoch.
    tau: usize,
    d: Vec<f64>,
    v: Mat,
    g: Mat,
    h: Mat,
    diagnostics: FdDiagnostics,
}

impl EpochFdSketch {
    /// `V` starts as the first `m` standard basis rows, so `m <= dim`.
    pub fn new(alpha: f64, m: usize, dim: usize) -> Result<Self> {
        check_params(alpha, m)?;
        if m > dim {
            return Err(Error::config(format!("sketch size {m} exceeds dimension {dim}")));
        }
        Ok(EpochFdSketch {
            alpha,
            tau: 0,
            d: vec![0.0; m],
            v: Mat::from_fn(m, dim, |i, j| if i == j { 1.0 } else { 0.0 }),
            g: Mat::zeros(m, dim),
            h: Mat::identity(2 * m).scale(1.0 / alpha),
            diagnostics: FdDiagnostics::default(),
        })
    }

    pub fn m(&self) -> usize {
        self.d.len()
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn d_diag(&self) -> &[f64] {
        &self.d
    }

    pub fn v(&self) -> &Mat {
        &self.v
    }

    pub fn diagnostics(&self) -> &FdDiagnostics {
        &self.diagnostics
    }
}

/// `H <- H - (H a)(b^T H) / (1 + b^T H a)`
pub(crate) fn sherman_morrison(h: &mut Mat, a: &[f64], b: &[f64]) {
    let ha = h.mul_vec(a);
    let htb = h.tr_mul_vec(b);
    let den = 1.0 + dot(b, &ha);
    let n = h.rows();
    for i in 0..n {
        let f = ha[i] / den;
        if f != 0.0 {
            axpy(-f, &htb, h.row_mut(i));
        }
    }
}

/// Rank-two correction of `H` after a vector was written into row `row`
/// of a previously zero slot. `q = S g - (g^T g / 2) e_row` with `S`
/// already holding `g`.
pub(crate) fn insert_row_update(h: &mut Mat, q: &[f64], row: usize) {
    let mut e = vec![0.0; q.len()];
    e[row] = 1.0;
    sherman_morrison(h, q, &e);
    sherman_morrison(h, &e, q);
}

pub(crate) fn reset_h(h: &mut Mat, d: &[f64], alpha: f64) {
    let m = d.len();
    *h = Mat::zeros(2 * m, 2 * m);
    for i in 0..2 * m {
        let di = if i < m { d[i] } else { 0.0 };
        h[(i, i)] = 1.0 / (alpha + di * di);
    }
}

impl Sketch for EpochFdSketch {
    fn dim(&self) -> usize {
        self.v.cols()
    }

    fn rows(&self) -> usize {
        2 * self.m()
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn update(&mut self, g_hat: &SparseVec) -> Result<()> {
        check_dim(self.dim(), g_hat)?;
        let m = self.m();
        g_hat.axpy_into(1.0, self.g.row_mut(self.tau));
        if self.tau + 1 < m {
            let mut q = self.project(g_hat);
            q[m + self.tau] -= 0.5 * g_hat.norm_sq();
            insert_row_update(&mut self.h, &q, m + self.tau);
            self.tau += 1;
        } else {
            let (v, sigma) = compute_eigensystem(&self.d, &self.v, &self.g)?;
            let rho = sigma[m - 1];
            self.d = sigma.iter().map(|s| (s - rho).max(0.0).sqrt()).collect();
            self.v = v;
            reset_h(&mut self.h, &self.d, self.alpha);
            self.g = Mat::zeros(m, self.dim());
            self.tau = 0;
            self.diagnostics.record(rho);
        }
        Ok(())
    }

    fn project(&self, x: &SparseVec) -> Vec<f64> {
        let m = self.m();
        let mut out = Vec::with_capacity(2 * m);
        out.extend((0..m).map(|i| self.d[i] * x.dot_dense(self.v.row(i))));
        out.extend((0..m).map(|i| x.dot_dense(self.g.row(i))));
        out
    }

    fn apply_h(&self, v: &[f64]) -> Vec<f64> {
        self.h.mul_vec(v)
    }

    fn lift(&self, v: &[f64], scale: f64, out: &mut [f64]) {
        let m = self.m();
        for i in 0..m {
            let a = scale * v[i] * self.d[i];
            if a != 0.0 {
                axpy(a, self.v.row(i), out);
            }
            if v[m + i] != 0.0 {
                axpy(scale * v[m + i], self.g.row(i), out);
            }
        }
    }

    fn sketch_matrix(&self) -> Mat {
        let m = self.m();
        Mat::from_fn(2 * m, self.dim(), |i, j| if i < m { self.d[i] * self.v[(i, j)] } else { self.g[(i - m, j)] })
    }

    fn h_matrix(&self) -> Mat {
        self.h.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eig_sym, inverse_checked};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(dim: usize, i: usize) -> SparseVec {
        SparseVec::new(dim, vec![i], vec![1.0]).unwrap()
    }

    fn direct_h(s: &Mat, alpha: f64) -> Mat {
        let mut a = s.gram_rows().into_mat();
        for i in 0..a.rows() {
            a[(i, i)] += alpha;
        }
        inverse_checked(&a, 1e14).unwrap()
    }

    #[test]
    fn init_values() {
        let fd = FdSketch::new(4.0, 3, 5).unwrap();
        assert_eq!(fd.h_diag(), &[0.25, 0.25, 0.25]);
        assert_eq!(fd.sketch_matrix(), Mat::zeros(3, 5));
        assert!(matches!(FdSketch::new(0.0, 3, 5), Err(Error::InvalidConfig(_))));
        assert!(matches!(FdSketch::new(1.0, 1, 5), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn first_two_inserts() {
        let alpha = 1.0;
        let mut fd = FdSketch::new(alpha, 2, 3).unwrap();
        fd.update(&e(3, 0)).unwrap();
        assert_eq!(fd.sketch_matrix(), Mat::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0; 3]]));
        assert_eq!(fd.h_diag(), &[0.5, 1.0]);
        assert_eq!(fd.diagnostics().rho, vec![0.0]);
        fd.update(&e(3, 1)).unwrap();
        assert_eq!(fd.diagnostics().rho, vec![0.0, 1.0]);
        assert!(fd.sketch_matrix().frobenius_norm() < 1e-15);
        assert_eq!(fd.h_diag(), &[1.0, 1.0]);
    }

    #[test]
    fn covariance_sandwich_on_random_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d, m, alpha) = (10, 4, 0.5);
        let mut fd = FdSketch::new(alpha, m, d).unwrap();
        let mut cov = SymMatrix::zeros(d);
        for _ in 0..50 {
            let g: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            cov.rank_one_update(1.0, &g);
            fd.update(&SparseVec::from_dense(&g)).unwrap();
            let s = fd.sketch_matrix();
            let gram = s.gram_rows();
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        assert!(gram.get(i, j).abs() < 1e-8);
                    }
                }
            }
            assert!(s.row(m - 1).iter().all(|v| *v == 0.0));
            assert!(direct_h(&s, alpha).max_abs_diff(&fd.h_matrix()) < 1e-10);
        }
        let s = fd.sketch_matrix();
        let diff = SymMatrix::from_mat(cov.as_mat().sub(&s.transpose().matmul(&s))).unwrap();
        let eig = eig_sym(&diff).unwrap();
        let total = fd.diagnostics().cumulative_shrink;
        assert!(eig.values.iter().all(|&v| v >= -1e-8 && v <= total + 1e-8));
    }

    #[test]
    fn eigensystem_trivial_cases() {
        let v = Mat::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]);
        let (v2, sigma) = compute_eigensystem(&[2.0, 1.0], &v, &Mat::zeros(2, 4)).unwrap();
        assert!(v2.max_abs_diff(&v) < 1e-15);
        assert_eq!(sigma, vec![4.0, 1.0]);

        let g = Mat::from_rows(&[vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]]);
        let (v3, sigma) = compute_eigensystem(&[0.0, 0.0], &v, &g).unwrap();
        assert!(sigma.iter().all(|s| (s - 1.0).abs() < 1e-15));
        for i in 0..2 {
            assert!(v3[(i, 0)].abs() < 1e-15 && v3[(i, 1)].abs() < 1e-15);
        }
    }

    #[test]
    fn epoch_first_insert_matches_direct_inverse() {
        let mut fd = EpochFdSketch::new(1.0, 2, 2).unwrap();
        fd.update(&e(2, 0)).unwrap();
        let s = Mat::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(fd.sketch_matrix(), s);
        assert!(fd.h_matrix().max_abs_diff(&direct_h(&s, 1.0)) < 1e-15);
    }

    #[test]
    fn epoch_zero_insert_only_moves_tau() {
        let mut fd = EpochFdSketch::new(1.0, 3, 4).unwrap();
        fd.update(&SparseVec::from_dense(&[1.0, 2.0, 0.0, 0.0])).unwrap();
        let before = fd.h_matrix();
        fd.update(&SparseVec::zeros(4)).unwrap();
        assert_eq!(fd.tau(), 2);
        assert_eq!(fd.h_matrix(), before);
    }

    #[test]
    fn epoch_h_stays_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (d, m, alpha) = (7, 3, 0.7);
        let mut fd = EpochFdSketch::new(alpha, m, d).unwrap();
        for _ in 0..40 {
            let g: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            fd.update(&SparseVec::from_dense(&g)).unwrap();
            let direct = direct_h(&fd.sketch_matrix(), alpha);
            assert!(fd.h_matrix().max_abs_diff(&direct) < 1e-7);
        }
    }

    #[test]
    fn epoch_matches_per_round_at_first_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (d, m) = (9, 4);
        let mut a = FdSketch::new(1.0, m, d).unwrap();
        let mut b = EpochFdSketch::new(1.0, m, d).unwrap();
        for _ in 0..m {
            let g: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = SparseVec::from_dense(&g);
            a.update(&g).unwrap();
            b.update(&g).unwrap();
        }
        let sa = a.sketch_matrix();
        let sb = b.sketch_matrix();
        let ca = sa.transpose().matmul(&sa);
        let cb = sb.transpose().matmul(&sb);
        assert!(ca.max_abs_diff(&cb) < 1e-10);
    }
}

//! Epoch Frequent-Directions Newton in time linear in the sparsity of the
//! examples. The sketch is `[D F Z; G]` where `G` buffers the sparse
//! to-sketch vectors of the current epoch.

use crate::error::{Error, Result};
use crate::fd::{insert_row_update, reset_h};
use crate::linalg::{decompose, dot, inverse_checked, top_k_eig, Lu, Mat, SymMatrix};
use crate::projection::{tau_c, EPS_DEN};
use crate::son::{begin_round, take_pending, Feedback, OnlineLearner, Pending, SonConfig};
use crate::sparse::{Factor, SparseStats, REBASE_CONDITION};
use crate::sparse_vec::SparseVec;

/// Output of the reduced eigenproblem: the new eigenvectors are the rows
/// of `N1 Z + N2 G` with eigenvalues `sigma`.
#[derive(Clone, Debug)]
pub struct SparseEigen {
    pub n1: Mat,
    pub n2: Mat,
    pub sigma: Vec<f64>,
}

/// Top-`m` eigenpairs of `S^T S` for `S = [D F Z; G]` without touching
/// `Z` beyond the coordinates of `G`. `k` must equal `Z Z^T`; `gz` is
/// `G Z^T` and `gg` is `G G^T`.
pub fn compute_sparse_eigensystem(d: &[f64], f: &Mat, k: &SymMatrix, gz: &Mat, gg: &SymMatrix) -> Result<SparseEigen> {
    let m = d.len();
    let mm = gz.matmul(&f.transpose());
    let mf = mm.matmul(f);
    let p = Mat::from_fn(gz.rows(), 2 * m, |i, j| if j < m { -mf[(i, j)] } else if j - m == i { 1.0 } else { 0.0 });
    let big = Mat::from_fn(2 * m, 2 * m, |i, j| match (i < m, j < m) {
        (true, true) => k.get(i, j),
        (true, false) => gz[(j - m, i)],
        (false, true) => gz[(i - m, j)],
        (false, false) => gg.get(i - m, j - m),
    });
    let (l, q) = decompose(&p, &SymMatrix::from_mat(big)?)?;
    let r = q.rows();

    let n = m + r;
    let ml = Mat::from_fn(gz.rows(), n, |i, j| if j < m { mm[(i, j)] } else { l[(i, j - m)] });
    let mut c = ml.transpose().matmul(&ml);
    for i in 0..m {
        c[(i, i)] += d[i] * d[i];
    }
    let eig = top_k_eig(&SymMatrix::from_mat(c)?, m)?;
    let u = &eig.vectors;
    let u1 = Mat::from_fn(m, m, |i, j| u[(i, j)]);
    let u2 = Mat::from_fn(m, r, |i, j| u[(i, m + j)]);
    let q1 = Mat::from_fn(r, m, |i, j| q[(i, j)]);
    let q2 = Mat::from_fn(r, m, |i, j| q[(i, m + j)]);
    Ok(SparseEigen {
        n1: u1.matmul(f).add(&u2.matmul(&q1)),
        n2: u2.matmul(&q2),
        sigma: eig.values.iter().map(|v| v.max(0.0)).collect(),
    })
}

/// How `Z` changed in the last sketch update.
enum ZChange {
    None,
    /// `Z += delta G_old`.
    Delta(Mat, Vec<SparseVec>),
    /// `Z` was replaced by `N1 Z_old + N2 G_old` and `F` reset to the
    /// identity.
    Rebase { z_old: Factor, n1: Mat, n2: Mat, g_old: Vec<SparseVec> },
}

#[derive(Clone, Debug)]
pub struct SparseFdSon {
    cfg: SonConfig,
    dim: usize,
    m: usize,
    d: Vec<f64>,
    f: Mat,
    z: Factor,
    g: Vec<SparseVec>,
    h: Mat,
    k: SymMatrix,
    u_bar: Vec<f64>,
    b: Vec<f64>,
    gram_refresh: Option<u64>,
    epochs: u64,
    pending: Option<Pending>,
    zx: Vec<f64>,
    t: u64,
    stats: SparseStats,
}

impl SparseFdSon {
    /// `m = 0` gives plain gradient descent; otherwise `2 <= m <= dim`.
    pub fn new(cfg: SonConfig, m: usize, dim: usize) -> Result<Self> {
        if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {}", cfg.alpha)));
        }
        if m == 1 {
            return Err(Error::config("FD needs a sketch size of 0 or at least 2"));
        }
        if m > dim {
            return Err(Error::config(format!("sketch size {m} exceeds dimension {dim}")));
        }
        let mut h = Mat::zeros(0, 0);
        reset_h(&mut h, &vec![0.0; m], cfg.alpha);
        Ok(SparseFdSon {
            cfg,
            dim,
            m,
            d: vec![0.0; m],
            f: Mat::identity(m),
            z: Factor::basis(m, dim),
            g: Vec::with_capacity(m),
            h,
            k: SymMatrix::identity(m),
            u_bar: vec![0.0; dim],
            b: vec![0.0; m],
            gram_refresh: None,
            epochs: 0,
            pending: None,
            zx: Vec::new(),
            t: 0,
            stats: SparseStats::default(),
        })
    }

    /// Recompute `K = Z Z^T` from scratch every `every` epochs.
    pub fn with_gram_refresh(mut self, every: u64) -> Self {
        self.gram_refresh = Some(every.max(1));
        self
    }

    pub fn stats(&self) -> SparseStats {
        self.stats
    }

    pub fn z(&self) -> Mat {
        self.z.to_mat()
    }

    pub fn gram(&self) -> &SymMatrix {
        &self.k
    }

    /// `[D F Z; G]`, materialized.
    pub fn sketch_matrix(&self) -> Mat {
        let m = self.m;
        let v = self.f.matmul(&self.z.to_mat());
        Mat::from_fn(2 * m, self.dim, |i, j| {
            if i < m {
                self.d[i] * v[(i, j)]
            } else {
                self.g.get(i - m).map_or(0.0, |r| dense_at(r, j))
            }
        })
    }

    pub fn h_matrix(&self) -> &Mat {
        &self.h
    }

    /// `w_bar + Z^T b`, materialized.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = self.u_bar.clone();
        self.z.add_tr_mul(&self.b, &mut w, &mut 0);
        w
    }

    /// `S v` from `Z v` and the sparse `v`.
    fn apply_s(&mut self, zv: &[f64], v: &SparseVec) -> Vec<f64> {
        let fz = self.f.mul_vec(zv);
        let mut out: Vec<f64> = fz.iter().zip(&self.d).map(|(a, b)| a * b).collect();
        out.resize(2 * self.m, 0.0);
        for (j, row) in self.g.iter().enumerate() {
            out[self.m + j] = row.dot(v);
            self.stats.coordinate_touches += (row.nnz() + v.nnz()) as u64;
        }
        out
    }

    /// `out += scale * G^T v`
    fn add_g_tr(&mut self, rows: &[SparseVec], v: &[f64], scale: f64, out: &mut [f64]) {
        for (row, vi) in rows.iter().zip(v) {
            if *vi != 0.0 {
                row.axpy_into(scale * vi, out);
                self.stats.coordinate_touches += row.nnz() as u64;
            }
        }
    }

    fn sketch_update(&mut self, g_hat: SparseVec, zg_hat: &[f64]) -> Result<ZChange> {
        let m = self.m;
        let tau = self.g.len();
        self.g.push(g_hat);
        if tau + 1 < m {
            let g_hat = self.g[tau].clone();
            let mut q = self.apply_s(zg_hat, &g_hat);
            q[m + tau] -= 0.5 * g_hat.norm_sq();
            insert_row_update(&mut self.h, &q, m + tau);
            return Ok(ZChange::None);
        }

        let g_old = std::mem::take(&mut self.g);
        let mut gz = Mat::zeros(m, m);
        for (j, row) in g_old.iter().enumerate() {
            let v = self.z.mul_sparse(row, &mut self.stats.coordinate_touches);
            gz.row_mut(j).copy_from_slice(&v);
        }
        let mut gg = SymMatrix::zeros(m);
        for a in 0..m {
            for b in a..m {
                gg.set(a, b, g_old[a].dot(&g_old[b]));
            }
        }
        let eig = compute_sparse_eigensystem(&self.d, &self.f, &self.k, &gz, &gg)?;
        let rho = eig.sigma[m - 1];
        self.d = eig.sigma.iter().map(|s| (s - rho).max(0.0).sqrt()).collect();
        reset_h(&mut self.h, &self.d, self.cfg.alpha);
        self.epochs += 1;

        let invertible = Lu::new(&eig.n1).map(|lu| lu.condition() <= REBASE_CONDITION).unwrap_or(false);
        if invertible {
            let delta = inverse_checked(&eig.n1, f64::INFINITY)?.matmul(&eig.n2);
            // K += Delta G Z^T + Z G^T Delta^T + Delta G G^T Delta^T
            let dgz = delta.matmul(&gz);
            let dggd = delta.matmul(gg.as_mat()).matmul(&delta.transpose());
            let upd = dgz.add(&dgz.transpose()).add(&dggd);
            self.k = SymMatrix::from_mat(self.k.as_mat().add(&upd))?;
            for (j, row) in g_old.iter().enumerate() {
                let col: Vec<f64> = (0..m).map(|i| delta[(i, j)]).collect();
                self.z.add_outer(&col, row, &mut self.stats.coordinate_touches);
            }
            self.f = eig.n1;
            if self.gram_refresh.is_some_and(|n| self.epochs % n == 0) {
                self.k = self.z.gram(&mut self.stats.coordinate_touches);
            }
            Ok(ZChange::Delta(delta, g_old))
        } else {
            let z_old = self.z.clone();
            let mut z = eig.n1.matmul(&z_old.to_mat());
            for (j, row) in g_old.iter().enumerate() {
                for i in 0..m {
                    row.axpy_into(eig.n2[(i, j)], z.row_mut(i));
                }
            }
            self.z = Factor::from_mat(&z);
            self.stats.coordinate_touches += 2 * (m * self.dim) as u64;
            self.k = self.z.gram(&mut self.stats.coordinate_touches);
            self.f = Mat::identity(m);
            self.stats.rebases += 1;
            Ok(ZChange::Rebase { z_old, n1: eig.n1, n2: eig.n2, g_old })
        }
    }
}

fn dense_at(v: &SparseVec, j: usize) -> f64 {
    match v.indices().binary_search(&j) {
        Ok(p) => v.values()[p],
        Err(_) => 0.0,
    }
}

impl OnlineLearner for SparseFdSon {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&mut self, x: &SparseVec) -> Result<f64> {
        begin_round(&self.pending, self.dim, x)?;
        let c = self.cfg.c();
        let m = self.m;
        let zx = self.z.mul_sparse(x, &mut self.stats.coordinate_touches);
        let ux = x.dot_dense(&self.u_bar);
        self.stats.coordinate_touches += x.nnz() as u64;
        let mut prediction = ux + dot(&self.b, &zx);
        let tau = tau_c(prediction, c);

        if tau != 0.0 {
            let xx = x.norm_sq();
            let x_hat = self.apply_s(&zx, x);
            let hx = self.h.mul_vec(&x_hat);
            let den = xx - dot(&x_hat, &hx);
            if den > EPS_DEN * xx {
                let gamma = tau / den;
                x.axpy_into(-gamma, &mut self.u_bar);
                self.stats.coordinate_touches += x.nnz() as u64;
                let rows = std::mem::take(&mut self.g);
                let mut u_bar = std::mem::take(&mut self.u_bar);
                self.add_g_tr(&rows, &hx[m..], gamma, &mut u_bar);
                self.g = rows;
                self.u_bar = u_bar;
                let dh: Vec<f64> = (0..m).map(|i| self.d[i] * hx[i]).collect();
                let shift = self.f.tr_mul_vec(&dh);
                for (bi, si) in self.b.iter_mut().zip(&shift) {
                    *bi += gamma * si;
                }
                prediction = x.dot_dense(&self.u_bar) + dot(&self.b, &zx);
                self.stats.coordinate_touches += x.nnz() as u64;
            } else {
                self.stats.degenerate_rounds += 1;
                prediction = prediction.clamp(-c, c);
            }
        }
        self.zx = zx;
        self.pending = Some(Pending { x: x.clone(), prediction });
        Ok(prediction)
    }

    fn learn(&mut self, y: f64) -> Result<Feedback> {
        let Pending { x, prediction } = take_pending(&mut self.pending)?;
        self.t += 1;
        let (loss, dloss) = self.cfg.loss.eval(prediction, y);
        let alpha = self.cfg.alpha;
        let g = x.scaled(dloss);
        if self.m == 0 {
            g.axpy_into(-1.0 / alpha, &mut self.u_bar);
            self.stats.coordinate_touches += x.nnz() as u64;
            return Ok(Feedback { prediction, loss, dloss });
        }
        let scale = self.cfg.sketch_scale(self.t, self.dim);
        let g_hat = g.scaled(scale);
        let zg: Vec<f64> = self.zx.iter().map(|v| dloss * v).collect();
        let zg_hat: Vec<f64> = zg.iter().map(|v| scale * v).collect();

        let change = self.sketch_update(g_hat, &zg_hat)?;

        // Z_new g from Z_old g and the old buffer.
        let zg_new = match &change {
            ZChange::None => zg,
            ZChange::Delta(delta, g_old) => {
                let gg: Vec<f64> = g_old.iter().map(|r| r.dot(&g)).collect();
                zg.iter().zip(delta.mul_vec(&gg)).map(|(a, b)| a + b).collect()
            }
            ZChange::Rebase { n1, n2, g_old, .. } => {
                let gg: Vec<f64> = g_old.iter().map(|r| r.dot(&g)).collect();
                n1.mul_vec(&zg).iter().zip(n2.mul_vec(&gg)).map(|(a, b)| a + b).collect()
            }
        };
        let sg = self.apply_s(&zg_new, &g);
        let hs = self.h.mul_vec(&sg);
        let m = self.m;

        g.axpy_into(-1.0 / alpha, &mut self.u_bar);
        self.stats.coordinate_touches += x.nnz() as u64;
        let rows = std::mem::take(&mut self.g);
        let mut u_bar = std::mem::take(&mut self.u_bar);
        self.add_g_tr(&rows, &hs[m..], 1.0 / alpha, &mut u_bar);
        self.g = rows;
        match change {
            ZChange::None => {}
            ZChange::Delta(delta, g_old) => {
                let dtb = delta.tr_mul_vec(&self.b);
                self.add_g_tr(&g_old, &dtb, -1.0, &mut u_bar);
            }
            ZChange::Rebase { z_old, .. } => {
                z_old.add_tr_mul(&self.b, &mut u_bar, &mut self.stats.coordinate_touches);
                self.b.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        self.u_bar = u_bar;

        let dh: Vec<f64> = (0..m).map(|i| self.d[i] * hs[i]).collect();
        let shift = self.f.tr_mul_vec(&dh);
        for (bi, si) in self.b.iter_mut().zip(&shift) {
            *bi += si / alpha;
        }
        Ok(Feedback { prediction, loss, dloss })
    }
}

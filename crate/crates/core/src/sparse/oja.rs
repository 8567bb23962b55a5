//! Oja-sketched Newton in time linear in the sparsity of the examples.

use crate::error::{Error, Result};
use crate::linalg::{decompose, dot, Lu, Mat, SymMatrix};
use crate::oja::RateSchedule;
use crate::projection::{tau_c, EPS_DEN};
use crate::son::{begin_round, take_pending, Feedback, OnlineLearner, Pending, SonConfig};
use crate::sparse::{Factor, SparseStats, REBASE_CONDITION};
use crate::sparse_vec::SparseVec;

#[derive(Clone, Debug)]
pub struct SparseOjaSon {
    cfg: SonConfig,
    schedule: RateSchedule,
    dim: usize,
    m: usize,
    t: u64,
    lambda: Vec<f64>,
    f: Mat,
    z: Factor,
    h: Vec<f64>,
    k: SymMatrix,
    u_bar: Vec<f64>,
    b: Vec<f64>,
    gram_refresh: Option<u64>,
    pending: Option<Pending>,
    zx: Vec<f64>,
    stats: SparseStats,
}

impl SparseOjaSon {
    pub fn new(cfg: SonConfig, m: usize, dim: usize) -> Result<Self> {
        if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {}", cfg.alpha)));
        }
        if m > dim {
            return Err(Error::config(format!("sketch size {m} exceeds dimension {dim}")));
        }
        Ok(SparseOjaSon {
            cfg,
            schedule: RateSchedule::InverseT,
            dim,
            m,
            t: 0,
            lambda: vec![0.0; m],
            f: Mat::identity(m),
            z: Factor::basis(m, dim),
            h: vec![1.0 / cfg.alpha; m],
            k: SymMatrix::identity(m),
            u_bar: vec![0.0; dim],
            b: vec![0.0; m],
            gram_refresh: None,
            pending: None,
            zx: Vec::new(),
            stats: SparseStats::default(),
        })
    }

    pub fn with_schedule(mut self, schedule: RateSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    /// Recompute `K = Z Z^T` from scratch every `every` rounds.
    pub fn with_gram_refresh(mut self, every: u64) -> Self {
        self.gram_refresh = Some(every.max(1));
        self
    }

    pub fn stats(&self) -> SparseStats {
        self.stats
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Current eigenvector estimate `F Z`, materialized.
    pub fn eigenvectors(&self) -> Mat {
        self.f.matmul(&self.z.to_mat())
    }

    pub fn f(&self) -> &Mat {
        &self.f
    }

    pub fn z(&self) -> Mat {
        self.z.to_mat()
    }

    pub fn gram(&self) -> &SymMatrix {
        &self.k
    }

    /// `w_bar + Z^T b`, materialized.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = self.u_bar.clone();
        let mut scratch = 0;
        self.z.add_tr_mul(&self.b, &mut w, &mut scratch);
        w
    }

    /// `t Lambda H` as a diagonal.
    fn tlh(&self, t: u64) -> Vec<f64> {
        let t = t as f64;
        self.lambda.iter().zip(&self.h).map(|(l, h)| t * l * h).collect()
    }

    fn sketch_update(&mut self, g_hat: &SparseVec, zg_hat: &[f64]) -> Result<Vec<f64>> {
        self.t += 1;
        let gamma = self.schedule.rate(self.t);
        let p = self.f.mul_vec(zg_hat);
        for (l, pi) in self.lambda.iter_mut().zip(&p) {
            *l = (1.0 - gamma) * *l + gamma * pi * pi;
        }

        // F^{-1} Gamma F reduces to gamma I for a shared rate.
        let delta: Vec<f64> = zg_hat.iter().map(|v| gamma * v).collect();
        let gg = g_hat.norm_sq();
        for i in 0..self.m {
            for j in i..self.m {
                let v = delta[i] * zg_hat[j] + zg_hat[i] * delta[j] + gg * delta[i] * delta[j];
                self.k.add_to(i, j, v);
            }
        }
        self.z.add_outer(&delta, g_hat, &mut self.stats.coordinate_touches);

        if self.gram_refresh.is_some_and(|n| self.t % n == 0) {
            self.k = self.z.gram(&mut self.stats.coordinate_touches);
        }
        let (_, q) = decompose(&self.f, &self.k)?;
        if q.rows() < self.m {
            return Err(Error::degenerate("eigenvector estimate lost rank"));
        }
        self.f = q;

        let t = self.t as f64;
        for (h, l) in self.h.iter_mut().zip(&self.lambda) {
            *h = 1.0 / (self.cfg.alpha + t * l);
        }
        Ok(delta)
    }

    /// Folds `F` into `Z` when the coming update, which can stretch the
    /// condition number of `Z` by `growth`, would push it past
    /// [`REBASE_CONDITION`]. The weights held in `Z^T b` move into `w_bar`
    /// and the cached `Z x` follows the new `Z`.
    fn maybe_rebase(&mut self, growth: f64) -> Result<()> {
        if self.m == 0 {
            return Ok(());
        }
        let cond = Lu::new(&self.f).map(|lu| lu.condition()).unwrap_or(f64::INFINITY);
        if cond * growth <= REBASE_CONDITION || cond <= 1.0 + 1e-12 {
            return Ok(());
        }
        self.z.add_tr_mul(&self.b, &mut self.u_bar, &mut self.stats.coordinate_touches);
        self.b.iter_mut().for_each(|v| *v = 0.0);
        self.zx = self.f.mul_vec(&self.zx);
        let z = self.f.matmul(&self.z.to_mat());
        self.z = Factor::from_mat(&z);
        self.stats.coordinate_touches += 2 * (self.m * self.dim) as u64;
        self.k = self.z.gram(&mut self.stats.coordinate_touches);
        self.f = Mat::identity(self.m);
        self.stats.rebases += 1;
        Ok(())
    }
}

impl OnlineLearner for SparseOjaSon {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&mut self, x: &SparseVec) -> Result<f64> {
        begin_round(&self.pending, self.dim, x)?;
        let c = self.cfg.c();
        let zx = self.z.mul_sparse(x, &mut self.stats.coordinate_touches);
        let ux = x.dot_dense(&self.u_bar);
        self.stats.coordinate_touches += x.nnz() as u64;
        let tau = tau_c(ux + dot(&self.b, &zx), c);
        let mut prediction = ux + dot(&self.b, &zx);

        if tau != 0.0 {
            let xx = x.norm_sq();
            let x_hat = self.f.mul_vec(&zx);
            let tlh = self.tlh(self.t);
            let quad: f64 = x_hat.iter().zip(&tlh).map(|(v, s)| v * v * s).sum();
            let den = xx - quad;
            if den > EPS_DEN * xx {
                let gamma = tau / den;
                x.axpy_into(-gamma, &mut self.u_bar);
                self.stats.coordinate_touches += x.nnz() as u64;
                let scaled: Vec<f64> = x_hat.iter().zip(&tlh).map(|(v, s)| v * s).collect();
                let shift = self.f.tr_mul_vec(&scaled);
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
        let (loss, dloss) = self.cfg.loss.eval(prediction, y);
        let scale = self.cfg.sketch_scale(self.t + 1, self.dim);
        let g = x.scaled(dloss);
        let g_hat = g.scaled(scale);
        self.maybe_rebase(1.0 + self.schedule.rate(self.t + 1) * g_hat.norm_sq())?;
        // Z is unchanged since prediction, so Z g = dloss Z x.
        let zg: Vec<f64> = self.zx.iter().map(|v| dloss * v).collect();
        let zg_hat: Vec<f64> = zg.iter().map(|v| scale * v).collect();

        let delta = self.sketch_update(&g_hat, &zg_hat)?;

        let alpha = self.cfg.alpha;
        let db = dot(&delta, &self.b);
        g.axpy_into(-1.0 / alpha, &mut self.u_bar);
        g_hat.axpy_into(-db, &mut self.u_bar);
        self.stats.coordinate_touches += 2 * x.nnz() as u64;

        // Z_new g = Z_old g + delta (g_hat^T g).
        let gh_g = g_hat.dot(&g);
        let zg_new: Vec<f64> = zg.iter().zip(&delta).map(|(a, d)| a + d * gh_g).collect();
        let tlh = self.tlh(self.t);
        let inner: Vec<f64> = self.f.mul_vec(&zg_new).iter().zip(&tlh).map(|(v, s)| v * s).collect();
        let shift = self.f.tr_mul_vec(&inner);
        for (bi, si) in self.b.iter_mut().zip(&shift) {
            *bi += si / alpha;
        }
        Ok(Feedback { prediction, loss, dloss })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossSpec;
    use crate::oja::{OjaConfig, OjaSketch};
    use crate::sketch::Sketch;
    use crate::son::{EtaMode, SonLearner};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(alpha: f64) -> SonConfig {
        SonConfig::new(LossSpec::square(1.0).unwrap(), alpha, EtaMode::Curvature)
    }

    fn sparse_stream(seed: u64, t: usize, d: usize, nnz: usize) -> Vec<(SparseVec, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t)
            .map(|_| {
                let mut idx = rand::seq::index::sample(&mut rng, d, nnz).into_vec();
                idx.sort_unstable();
                let vals = idx.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (SparseVec::new(d, idx, vals).unwrap(), y)
            })
            .collect()
    }

    #[test]
    fn zero_sketch_is_gradient_descent() {
        let alpha = 2.0;
        let c = SonConfig::new(LossSpec::square(100.0).unwrap(), alpha, EtaMode::Curvature);
        let mut l = SparseOjaSon::new(c, 0, 5).unwrap();
        let mut w = [0.0; 5];
        for (x, y) in sparse_stream(1, 30, 5, 2) {
            let p = l.predict(&x).unwrap();
            assert!((p - x.dot_dense(&w)).abs() < 1e-12);
            let f = l.learn(y).unwrap();
            x.axpy_into(-f.dloss / alpha, &mut w);
        }
    }

    #[test]
    fn first_update_matches_dense_oja() {
        let d = 6;
        let mut sparse = SparseOjaSon::new(cfg(1.0), 2, d).unwrap();
        let mut dense = OjaSketch::new(OjaConfig::new(1.0, 2), d).unwrap();
        let g = SparseVec::from_dense(&[0.5, -1.0, 0.0, 2.0, 0.0, 0.0]);
        let zg = sparse.z.mul_sparse(&g, &mut 0);
        sparse.sketch_update(&g, &zg).unwrap();
        dense.update(&g).unwrap();
        assert!(sparse.eigenvectors().max_abs_diff(dense.v()) < 1e-14);
        assert_eq!(sparse.lambda(), dense.lambda());
    }

    #[test]
    fn zero_vector_only_advances_t() {
        let mut l = SparseOjaSon::new(cfg(1.0), 2, 4).unwrap();
        let before = (l.f.clone(), l.z.to_mat(), l.k.clone());
        l.sketch_update(&SparseVec::zeros(4), &[0.0, 0.0]).unwrap();
        assert_eq!(l.t, 1);
        assert_eq!((l.f.clone(), l.z.to_mat(), l.k.clone()), before);
    }

    #[test]
    fn tracks_dense_eigenvectors_and_gram() {
        let (d, m) = (1000, 5);
        let mut sparse = SparseOjaSon::new(cfg(1.0), m, d).unwrap();
        let mut dense = OjaSketch::new(OjaConfig::new(1.0, m), d).unwrap();
        // Concentrate on a few coordinates so the sketch actually moves.
        for (i, (x, _)) in sparse_stream(3, 500, 40, 10).into_iter().enumerate() {
            let g = SparseVec::new(d, x.indices().to_vec(), x.values().to_vec()).unwrap();
            let zg = sparse.z.mul_sparse(&g, &mut 0);
            sparse.sketch_update(&g, &zg).unwrap();
            dense.update(&g).unwrap();
            if i % 50 == 0 {
                let fz = sparse.eigenvectors();
                // Rows agree up to sign-free projector distance.
                let p1 = fz.transpose().matmul(&fz);
                let p2 = dense.v().transpose().matmul(dense.v());
                assert!(p1.max_abs_diff(&p2) < 1e-6);
                let fkf = sparse.f.matmul(sparse.k.as_mat()).matmul(&sparse.f.transpose());
                assert!(fkf.max_abs_diff(&Mat::identity(m)) < 1e-7);
                let kz = sparse.z.gram(&mut 0);
                let scale = kz.as_mat().frobenius_norm().max(1.0);
                assert!(kz.as_mat().max_abs_diff(sparse.k.as_mat()) < 1e-7 * scale);
            }
        }
    }

    #[test]
    fn predictions_match_dense_learner() {
        let (d, m) = (60, 4);
        let stream = sparse_stream(8, 400, d, 6);
        let mut sparse = SparseOjaSon::new(cfg(0.5), m, d).unwrap();
        let mut dense = SonLearner::new(cfg(0.5), OjaSketch::new(OjaConfig::new(0.5, m), d).unwrap()).unwrap();
        for (x, y) in &stream {
            let p = sparse.predict(x).unwrap();
            let q = dense.predict(x).unwrap();
            assert!((p - q).abs() <= 1e-6 * q.abs().max(1.0), "{p} vs {q}");
            let w = sparse.weights();
            for (a, b) in w.iter().zip(dense.weights()) {
                assert!((a - b).abs() < 1e-6);
            }
            sparse.learn(*y).unwrap();
            dense.learn(*y).unwrap();
        }
    }
}

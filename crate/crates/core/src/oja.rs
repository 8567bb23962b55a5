//! Oja's rule as a sketch: streaming estimates of the top eigenvalues and
//! eigenvectors of the to-sketch covariance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, Mat, EPS_RANK};
use crate::sketch::{check_dim, Sketch};
use crate::sparse_vec::SparseVec;

/// Learning rate `gamma_t` shared by all eigen-directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateSchedule {
    /// `1 / t`
    InverseT,
    /// `min(1, c / t)`
    Scaled(f64),
    Constant(f64),
}

impl RateSchedule {
    pub fn rate(&self, t: u64) -> f64 {
        match *self {
            RateSchedule::InverseT => 1.0 / t as f64,
            RateSchedule::Scaled(c) => (c / t as f64).min(1.0),
            RateSchedule::Constant(g) => g,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            RateSchedule::InverseT => true,
            RateSchedule::Scaled(c) => c > 0.0 && c.is_finite(),
            RateSchedule::Constant(g) => g > 0.0 && g <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid Oja rate schedule {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct OjaConfig {
    pub alpha: f64,
    pub m: usize,
    pub schedule: RateSchedule,
    /// Refresh eigenvectors only every `m` rounds, from the buffered vectors.
    pub block: bool,
    /// Start from a random orthonormal basis instead of `e_1, ..., e_m`.
    pub random_init: Option<u64>,
}

impl OjaConfig {
    pub fn new(alpha: f64, m: usize) -> Self {
        OjaConfig { alpha, m, schedule: RateSchedule::InverseT, block: false, random_init: None }
    }
}

/// `V` has orthonormal rows, `S = (t Lambda)^{1/2} V` and
/// `H = diag(1 / (alpha + t Lambda_i))`.
#[derive(Clone, Debug)]
pub struct OjaSketch {
    cfg: OjaConfig,
    t: u64,
    lambda: Vec<f64>,
    v: Mat,
    h: Vec<f64>,
    pending: Vec<(f64, SparseVec)>,
    rank_repairs: u64,
}

impl OjaSketch {
    pub fn new(cfg: OjaConfig, dim: usize) -> Result<Self> {
        if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {}", cfg.alpha)));
        }
        if cfg.m > dim {
            return Err(Error::config(format!("sketch size {} exceeds dimension {dim}", cfg.m)));
        }
        cfg.schedule.validate()?;
        let m = cfg.m;
        let v = match cfg.random_init {
            None => Mat::from_fn(m, dim, |i, j| if i == j { 1.0 } else { 0.0 }),
            Some(seed) => random_orthonormal(m, dim, seed),
        };
        let h = vec![1.0 / cfg.alpha; m];
        Ok(OjaSketch { cfg, t: 0, lambda: vec![0.0; m], v, h, pending: Vec::new(), rank_repairs: 0 })
    }

    pub fn m(&self) -> usize {
        self.cfg.m
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Running eigenvalue estimates of the to-sketch covariance.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn v(&self) -> &Mat {
        &self.v
    }

    pub fn h_diag(&self) -> &[f64] {
        &self.h
    }

    /// Times orthonormalization lost a direction and a basis vector was
    /// substituted.
    pub fn rank_repairs(&self) -> u64 {
        self.rank_repairs
    }

    fn scale(&self, i: usize) -> f64 {
        (self.t as f64 * self.lambda[i]).sqrt()
    }

    fn apply_vectors(&mut self) {
        let pending = std::mem::take(&mut self.pending);
        for (gamma, g) in &pending {
            let p: Vec<f64> = (0..self.m()).map(|i| g.dot_dense(self.v.row(i))).collect();
            for (i, pi) in p.iter().enumerate() {
                self.lambda[i] = (1.0 - gamma) * self.lambda[i] + gamma * pi * pi;
            }
            if self.cfg.block {
                continue;
            }
            for (i, pi) in p.iter().enumerate() {
                g.axpy_into(gamma * pi, self.v.row_mut(i));
            }
        }
        if self.cfg.block {
            // The block step applies V <- V + sum_s gamma_s V g_s g_s^T with
            // V frozen at the start of the block.
            let frozen = self.v.clone();
            for (gamma, g) in &pending {
                for i in 0..self.m() {
                    let pi = g.dot_dense(frozen.row(i));
                    g.axpy_into(gamma * pi, self.v.row_mut(i));
                }
            }
        }
        self.rank_repairs += orthonormalize_with_repair(&mut self.v);
    }
}

/// Two-pass Gram-Schmidt on the rows of `v` in place. A row that collapses
/// is replaced by the first standard basis vector with a nonzero residual
/// against the rows before it. Returns the number of replacements.
pub(crate) fn orthonormalize_with_repair(v: &mut Mat) -> u64 {
    let (m, n) = (v.rows(), v.cols());
    let mut repairs = 0;
    for i in 0..m {
        let orig_norm = norm(v.row(i));
        reorthogonalize(v, i);
        let c = norm(v.row(i));
        if c > EPS_RANK * orig_norm && c > 0.0 {
            v.row_mut(i).iter_mut().for_each(|x| *x /= c);
            continue;
        }
        repairs += 1;
        for k in 0..n {
            let row = v.row_mut(i);
            row.iter_mut().for_each(|x| *x = 0.0);
            row[k] = 1.0;
            reorthogonalize(v, i);
            let c = norm(v.row(i));
            if c > 1e-6 {
                v.row_mut(i).iter_mut().for_each(|x| *x /= c);
                break;
            }
        }
    }
    repairs
}

fn reorthogonalize(v: &mut Mat, i: usize) {
    for _pass in 0..2 {
        for j in 0..i {
            let a = dot(v.row(j), v.row(i));
            let prev = v.row(j).to_vec();
            axpy(-a, &prev, v.row_mut(i));
        }
    }
}

pub(crate) fn random_orthonormal(m: usize, dim: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Mat::from_fn(m, dim, |_, _| StandardNormal.sample(&mut rng));
    orthonormalize_with_repair(&mut v);
    v
}

impl Sketch for OjaSketch {
    fn dim(&self) -> usize {
        self.v.cols()
    }

    fn rows(&self) -> usize {
        self.m()
    }

    fn alpha(&self) -> f64 {
        self.cfg.alpha
    }

    fn update(&mut self, g_hat: &SparseVec) -> Result<()> {
        check_dim(self.dim(), g_hat)?;
        self.t += 1;
        let gamma = self.cfg.schedule.rate(self.t);
        self.pending.push((gamma, g_hat.clone()));
        if !self.cfg.block || self.pending.len() >= self.m().max(1) {
            self.apply_vectors();
        }
        let t = self.t as f64;
        for (h, l) in self.h.iter_mut().zip(&self.lambda) {
            *h = 1.0 / (self.cfg.alpha + t * l);
        }
        Ok(())
    }

    fn project(&self, x: &SparseVec) -> Vec<f64> {
        (0..self.m()).map(|i| self.scale(i) * x.dot_dense(self.v.row(i))).collect()
    }

    fn apply_h(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.h).map(|(a, b)| a * b).collect()
    }

    fn lift(&self, v: &[f64], scale: f64, out: &mut [f64]) {
        for (i, vi) in v.iter().enumerate() {
            let a = scale * vi * self.scale(i);
            if a != 0.0 {
                axpy(a, self.v.row(i), out);
            }
        }
    }

    fn sketch_matrix(&self) -> Mat {
        Mat::from_fn(self.m(), self.dim(), |i, j| self.scale(i) * self.v[(i, j)])
    }

    fn h_matrix(&self) -> Mat {
        Mat::from_diag(&self.h)
    }
}

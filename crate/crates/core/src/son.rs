//! Sketched Online Newton over any [`Sketch`], and the dense full-matrix
//! Online Newton learner with its pseudoinverse variant.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Mat, SymMatrix};
use crate::loss::LossSpec;
use crate::projection::{project_sketched, project_with_inverse, project_with_pinv, pseudo_inverse};
use crate::sketch::Sketch;
use crate::sparse_vec::SparseVec;

/// Largest dimension the dense learner accepts.
pub const DENSE_DIM_LIMIT: usize = 4096;

/// What the learner reports back once the label is revealed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feedback {
    pub prediction: f64,
    pub loss: f64,
    /// Derivative of the loss at the prediction.
    pub dloss: f64,
}

/// The online protocol: `predict` sees only the example, `learn` then
/// receives the label of that same example. Calls must alternate.
pub trait OnlineLearner {
    fn dim(&self) -> usize;

    fn predict(&mut self, x: &SparseVec) -> Result<f64>;

    fn learn(&mut self, y: f64) -> Result<Feedback>;
}

impl<L: OnlineLearner + ?Sized> OnlineLearner for Box<L> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn predict(&mut self, x: &SparseVec) -> Result<f64> {
        (**self).predict(x)
    }

    fn learn(&mut self, y: f64) -> Result<Feedback> {
        (**self).learn(y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtaMode {
    /// `eta_t = sqrt(d / (C^2 L^2 t))`, for losses without curvature.
    Convex,
    /// `eta_t = 0`, relying on the loss curvature.
    Curvature,
}

pub fn eta_schedule(t: u64, mode: EtaMode, c: f64, lipschitz: f64, d: usize) -> f64 {
    match mode {
        EtaMode::Convex => (d as f64 / (c * c * lipschitz * lipschitz * t.max(1) as f64)).sqrt(),
        EtaMode::Curvature => 0.0,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SonConfig {
    pub loss: LossSpec,
    pub alpha: f64,
    pub eta_mode: EtaMode,
}

impl SonConfig {
    pub fn new(loss: LossSpec, alpha: f64, eta_mode: EtaMode) -> Self {
        SonConfig { loss, alpha, eta_mode }
    }

    pub fn c(&self) -> f64 {
        self.loss.c
    }

    /// `sqrt(sigma + eta_t)`, the factor from gradient to to-sketch vector.
    pub fn sketch_scale(&self, t: u64, d: usize) -> f64 {
        let eta = eta_schedule(t, self.eta_mode, self.loss.c, self.loss.lipschitz, d);
        (self.loss.curvature_sigma() + eta).sqrt()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Pending {
    pub x: SparseVec,
    pub prediction: f64,
}

pub(crate) fn take_pending(p: &mut Option<Pending>) -> Result<Pending> {
    p.take().ok_or_else(|| Error::input("learn called without a pending prediction"))
}

pub(crate) fn begin_round(p: &Option<Pending>, dim: usize, x: &SparseVec) -> Result<()> {
    if p.is_some() {
        return Err(Error::input("predict called twice without learning the label"));
    }
    if x.dim() != dim {
        return Err(Error::input(format!("example has dimension {}, expected {dim}", x.dim())));
    }
    Ok(())
}

/// Sketched Online Newton: projection, prediction, sketch update, then the
/// Newton step `u = w - (1/alpha)(g - S^T H S g)`.
#[derive(Clone, Debug)]
pub struct SonLearner<S> {
    cfg: SonConfig,
    sketch: S,
    u: Vec<f64>,
    w: Vec<f64>,
    t: u64,
    pending: Option<Pending>,
    degenerate_rounds: u64,
}

impl<S: Sketch> SonLearner<S> {
    pub fn new(cfg: SonConfig, sketch: S) -> Result<Self> {
        if (cfg.alpha - sketch.alpha()).abs() > 0.0 {
            return Err(Error::config("learner and sketch disagree on alpha"));
        }
        let d = sketch.dim();
        Ok(SonLearner { cfg, sketch, u: vec![0.0; d], w: vec![0.0; d], t: 0, pending: None, degenerate_rounds: 0 })
    }

    pub fn sketch(&self) -> &S {
        &self.sketch
    }

    /// Weights used for the latest prediction.
    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// Rounds where the projection denominator vanished and the prediction
    /// was clamped instead.
    pub fn degenerate_rounds(&self) -> u64 {
        self.degenerate_rounds
    }
}

impl<S: Sketch> OnlineLearner for SonLearner<S> {
    fn dim(&self) -> usize {
        self.sketch.dim()
    }

    fn predict(&mut self, x: &SparseVec) -> Result<f64> {
        begin_round(&self.pending, self.dim(), x)?;
        let c = self.cfg.c();
        let prediction = if x.nnz() == 0 {
            self.w.clone_from(&self.u);
            0.0
        } else {
            match project_sketched(&self.u, x, &self.sketch, c) {
                Ok(r) => {
                    self.w = r.w;
                    x.dot_dense(&self.w)
                }
                Err(Error::Degenerate(_)) => {
                    self.degenerate_rounds += 1;
                    self.w.clone_from(&self.u);
                    x.dot_dense(&self.w).clamp(-c, c)
                }
                Err(e) => return Err(e),
            }
        };
        self.pending = Some(Pending { x: x.clone(), prediction });
        Ok(prediction)
    }

    fn learn(&mut self, y: f64) -> Result<Feedback> {
        let Pending { x, prediction } = take_pending(&mut self.pending)?;
        self.t += 1;
        let (loss, dloss) = self.cfg.loss.eval(prediction, y);
        let g = x.scaled(dloss);
        let g_hat = g.scaled(self.cfg.sketch_scale(self.t, self.dim()));
        self.sketch.update(&g_hat)?;

        let alpha = self.cfg.alpha;
        self.u.clone_from(&self.w);
        g.axpy_into(-1.0 / alpha, &mut self.u);
        let hsg = self.sketch.apply_h(&self.sketch.project(&g));
        self.sketch.lift(&hsg, 1.0 / alpha, &mut self.u);
        Ok(Feedback { prediction, loss, dloss })
    }
}

/// Online Newton with the full `d x d` matrix
/// `A_t = alpha I + sum_s (sigma + eta_s) g_s g_s^T`. With `alpha = 0` the
/// inverse becomes the Moore-Penrose pseudoinverse.
#[derive(Clone, Debug)]
pub struct FullOns {
    cfg: SonConfig,
    dim: usize,
    /// `A^{-1}` when `alpha > 0`, otherwise `A`.
    mat: SymMatrix,
    pinv: Mat,
    u: Vec<f64>,
    w: Vec<f64>,
    t: u64,
    pending: Option<Pending>,
}

impl FullOns {
    pub fn new(cfg: SonConfig, dim: usize) -> Result<Self> {
        if dim > DENSE_DIM_LIMIT {
            return Err(Error::config(format!(
                "dimension {dim} is too large for the dense learner (limit {DENSE_DIM_LIMIT}); use a sketched learner"
            )));
        }
        if !(cfg.alpha >= 0.0 && cfg.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be nonnegative, got {}", cfg.alpha)));
        }
        let mat = if cfg.alpha > 0.0 {
            SymMatrix::from_diag(&vec![1.0 / cfg.alpha; dim])
        } else {
            SymMatrix::zeros(dim)
        };
        Ok(FullOns {
            cfg,
            dim,
            mat,
            pinv: Mat::zeros(dim, dim),
            u: vec![0.0; dim],
            w: vec![0.0; dim],
            t: 0,
            pending: None,
        })
    }

    fn invariant(&self) -> bool {
        self.cfg.alpha == 0.0
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// The current `A`, materialized.
    pub fn a_matrix(&self) -> Result<Mat> {
        if self.invariant() {
            Ok(self.mat.as_mat().clone())
        } else {
            crate::linalg::inverse_checked(self.mat.as_mat(), f64::INFINITY)
        }
    }
}

impl OnlineLearner for FullOns {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&mut self, x: &SparseVec) -> Result<f64> {
        begin_round(&self.pending, self.dim, x)?;
        let prediction = if x.nnz() == 0 {
            self.w.clone_from(&self.u);
            0.0
        } else {
            let xd = x.to_dense();
            let r = if self.invariant() {
                project_with_pinv(&self.u, &xd, &self.mat, &self.pinv, self.cfg.c())?
            } else {
                project_with_inverse(&self.u, &xd, &self.mat, self.cfg.c())?
            };
            self.w = r.w;
            dot(&self.w, &xd)
        };
        self.pending = Some(Pending { x: x.clone(), prediction });
        Ok(prediction)
    }

    fn learn(&mut self, y: f64) -> Result<Feedback> {
        let Pending { x, prediction } = take_pending(&mut self.pending)?;
        self.t += 1;
        let (loss, dloss) = self.cfg.loss.eval(prediction, y);
        let g = x.scaled(dloss).to_dense();
        let s = self.cfg.sketch_scale(self.t, self.dim);
        let g_hat: Vec<f64> = g.iter().map(|v| s * v).collect();

        self.u.clone_from(&self.w);
        if self.invariant() {
            self.mat.rank_one_update(1.0, &g_hat);
            self.pinv = pseudo_inverse(&self.mat)?;
            let step = self.pinv.mul_vec(&g);
            axpy(-1.0, &step, &mut self.u);
        } else {
            // Sherman-Morrison on A^{-1} for A += g_hat g_hat^T.
            let ag = self.mat.mul_vec(&g_hat);
            let den = 1.0 + dot(&g_hat, &ag);
            self.mat.rank_one_update(-1.0 / den, &ag);
            let step = self.mat.mul_vec(&g);
            axpy(-1.0, &step, &mut self.u);
        }
        Ok(Feedback { prediction, loss, dloss })
    }
}

/// The sum of the three terms of the curvature-mode regret bound for the
/// full-matrix learner: `alpha/2 |w|^2 + d/(2 sigma) ln(1 + sigma G / (d alpha))`
/// where `G` is the sum of squared gradient norms.
pub fn curvature_regret_bound(alpha: f64, w_norm_sq: f64, d: usize, sigma: f64, grad_sq_sum: f64) -> f64 {
    let d = d as f64;
    0.5 * alpha * w_norm_sq + d / (2.0 * sigma) * (1.0 + sigma * grad_sq_sum / (d * alpha)).ln()
}

/// The FD-sketched counterpart with curvature only (`eta = 0`):
/// `alpha/2 |w|^2 + m/(2 sigma) ln(1 + tr(S^T S)/(m alpha)) + m Omega_k / (2 (m - k) sigma alpha)`.
pub fn fd_regret_bound(alpha: f64, w_norm_sq: f64, m: usize, sigma: f64, sketch_trace: f64, omega_k: f64, k: usize) -> f64 {
    let mf = m as f64;
    0.5 * alpha * w_norm_sq
        + mf / (2.0 * sigma) * (1.0 + sketch_trace / (mf * alpha)).ln()
        + mf * omega_k / (2.0 * (m - k) as f64 * sigma * alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::FdSketch;
    use crate::sketch::{EmptySketch, ExactSketch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(c: f64) -> LossSpec {
        LossSpec::square(c).unwrap()
    }

    fn random_stream(seed: u64, t: usize, d: usize) -> Vec<(SparseVec, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (SparseVec::from_dense(&x), y)
            })
            .collect()
    }

    fn run(learner: &mut dyn OnlineLearner, stream: &[(SparseVec, f64)]) -> Vec<f64> {
        stream
            .iter()
            .map(|(x, y)| {
                let p = learner.predict(x).unwrap();
                learner.learn(*y).unwrap();
                p
            })
            .collect()
    }

    #[test]
    fn eta_values() {
        assert_eq!(eta_schedule(4, EtaMode::Convex, 1.0, 1.0, 4), 1.0);
        assert_eq!(eta_schedule(4, EtaMode::Curvature, 1.0, 1.0, 4), 0.0);
        let mut prev = f64::INFINITY;
        for t in 1..50 {
            let e = eta_schedule(t, EtaMode::Convex, 0.7, 2.8, 10);
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn first_prediction_is_zero() {
        let cfg = SonConfig::new(square(1.0), 1.0, EtaMode::Curvature);
        let mut l = SonLearner::new(cfg, FdSketch::new(1.0, 2, 3).unwrap()).unwrap();
        assert_eq!(l.predict(&SparseVec::from_dense(&[3.0, -1.0, 2.0])).unwrap(), 0.0);
    }

    #[test]
    fn protocol_order_enforced() {
        let cfg = SonConfig::new(square(1.0), 1.0, EtaMode::Curvature);
        let mut l = SonLearner::new(cfg, EmptySketch::new(1.0, 2).unwrap()).unwrap();
        assert!(l.learn(1.0).is_err());
        let x = SparseVec::from_dense(&[1.0, 0.0]);
        l.predict(&x).unwrap();
        assert!(l.predict(&x).is_err());
        l.learn(1.0).unwrap();
        assert!(l.predict(&SparseVec::zeros(3)).is_err());
    }

    #[test]
    fn empty_sketch_is_gradient_descent() {
        let alpha = 2.0;
        let cfg = SonConfig::new(square(100.0), alpha, EtaMode::Curvature);
        let mut l = SonLearner::new(cfg, EmptySketch::new(alpha, 3).unwrap()).unwrap();
        let stream = random_stream(1, 30, 3);
        let mut w = [0.0; 3];
        for (x, y) in &stream {
            let p = l.predict(x).unwrap();
            assert!((p - x.dot_dense(&w)).abs() < 1e-12);
            let f = l.learn(*y).unwrap();
            x.axpy_into(-f.dloss / alpha, &mut w);
        }
    }

    #[test]
    fn fd_matches_full_ons_below_sketch_rank() {
        // Stream confined to a 3-dimensional subspace: with m = 4 the FD
        // sketch never shrinks and equals the full covariance.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let d = 6;
        let basis: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let stream: Vec<(SparseVec, f64)> = (0..100)
            .map(|_| {
                let mut x = vec![0.0; d];
                for b in &basis {
                    axpy(rng.random_range(-1.0..1.0), b, &mut x);
                }
                (SparseVec::from_dense(&x), if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            })
            .collect();
        let cfg = SonConfig::new(square(1.0), 1.0, EtaMode::Curvature);
        let mut fd = SonLearner::new(cfg, FdSketch::new(1.0, 4, d).unwrap()).unwrap();
        let mut full = FullOns::new(cfg, d).unwrap();
        let a = run(&mut fd, &stream);
        let b = run(&mut full, &stream);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-5, "{p} vs {q}");
        }
        assert!(fd.sketch().diagnostics().cumulative_shrink < 1e-9);
    }

    #[test]
    fn exact_sketch_matches_dense_inverse_each_round() {
        let stream = random_stream(5, 40, 4);
        let cfg = SonConfig::new(square(1.0), 0.5, EtaMode::Convex);
        let mut sk = SonLearner::new(cfg, ExactSketch::new(0.5, 4).unwrap()).unwrap();
        let mut full = FullOns::new(cfg, 4).unwrap();
        for (x, y) in &stream {
            let p = sk.predict(x).unwrap();
            let q = full.predict(x).unwrap();
            assert!((p - q).abs() < 1e-6);
            for (a, b) in sk.weights().iter().zip(full.weights()) {
                assert!((a - b).abs() < 1e-6);
            }
            sk.learn(*y).unwrap();
            full.learn(*y).unwrap();
        }
    }

    #[test]
    fn full_ons_without_curvature_is_gradient_descent() {
        let alpha = 3.0;
        let loss = LossSpec::absolute_linear(100.0).unwrap();
        let cfg = SonConfig::new(loss, alpha, EtaMode::Curvature);
        let mut full = FullOns::new(cfg, 3).unwrap();
        let mut w = [0.0; 3];
        for (x, y) in &random_stream(3, 20, 3) {
            let p = full.predict(x).unwrap();
            assert!((p - x.dot_dense(&w)).abs() < 1e-12);
            let f = full.learn(*y).unwrap();
            x.axpy_into(-f.dloss / alpha, &mut w);
        }
        assert!(full.a_matrix().unwrap().max_abs_diff(&Mat::identity(3).scale(alpha)) < 1e-12);
    }

    #[test]
    fn predictions_stay_in_band() {
        let stream = random_stream(9, 200, 5);
        let c = 0.5;
        let cfg = SonConfig::new(square(c), 0.1, EtaMode::Curvature);
        let mut fd = SonLearner::new(cfg, FdSketch::new(0.1, 3, 5).unwrap()).unwrap();
        let mut full = FullOns::new(cfg, 5).unwrap();
        let mut inv = FullOns::new(SonConfig::new(square(c), 0.0, EtaMode::Curvature), 5).unwrap();
        for l in [&mut fd as &mut dyn OnlineLearner, &mut full, &mut inv] {
            for p in run(l, &stream) {
                assert!(p.abs() <= c + 1e-9);
            }
        }
    }

    /// Without clipping the pseudoinverse learner is unaffected by an
    /// invertible change of basis, rank-deficient early rounds included.
    #[test]
    fn pseudoinverse_invariant_when_unclipped() {
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let m = Mat::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.4..0.4));
        let cfg = SonConfig::new(square(10.0), 0.0, EtaMode::Curvature);
        let mut plain = FullOns::new(cfg, d).unwrap();
        let mut moved = FullOns::new(cfg, d).unwrap();
        // Realizable targets keep every prediction far inside the band.
        let theta = [0.5, -0.3, 0.2, 0.4];
        for (x, _) in &random_stream(8, 40, d) {
            let y = x.dot_dense(&theta);
            let mx = SparseVec::from_dense(&m.mul_vec(&x.to_dense()));
            let p = plain.predict(x).unwrap();
            let q = moved.predict(&mx).unwrap();
            assert!((p - q).abs() <= 1e-6 * (1.0 + p.abs()), "{p} vs {q}");
            plain.learn(y).unwrap();
            moved.learn(y).unwrap();
        }
    }

    #[test]
    fn dense_guard() {
        let cfg = SonConfig::new(square(1.0), 1.0, EtaMode::Curvature);
        assert!(matches!(FullOns::new(cfg, DENSE_DIM_LIMIT + 1), Err(Error::InvalidConfig(_))));
    }
}

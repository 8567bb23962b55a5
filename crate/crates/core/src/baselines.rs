//! First-order baselines and the diagonal preconditioning wrapper.

use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::son::{begin_round, take_pending, Feedback, OnlineLearner, Pending};
use crate::sparse_vec::SparseVec;

/// Initial value of the diagonal preconditioner.
pub const DIAG_FLOOR: f64 = 0.1;

fn check_step(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("stepsize must be positive, got {eta}")))
    }
}

/// Online gradient descent with a constant stepsize and no projection.
#[derive(Clone, Debug)]
pub struct Ogd {
    loss: LossSpec,
    eta: f64,
    w: Vec<f64>,
    pending: Option<Pending>,
}

impl Ogd {
    pub fn new(loss: LossSpec, eta: f64, dim: usize) -> Result<Self> {
        check_step(eta)?;
        Ok(Ogd { loss, eta, w: vec![0.0; dim], pending: None })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }
}

impl OnlineLearner for Ogd {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn predict(&mut self, x: &SparseVec) -> Result<f64> {
        begin_round(&self.pending, self.w.len(), x)?;
        let prediction = x.dot_dense(&self.w);
        self.pending = Some(Pending { x: x.clone(), prediction });
        Ok(prediction)
    }

    fn learn(&mut self, y: f64) -> Result<Feedback> {
        let Pending { x, prediction } = take_pending(&mut self.pending)?;
        let (loss, dloss) = self.loss.eval(prediction, y);
        x.axpy_into(-self.eta * dloss, &mut self.w);
        Ok(Feedback { prediction, loss, dloss })
    }
}

/// Diagonal AdaGrad. Coordinates whose accumulator is still zero are left
/// untouched.
#[derive(Clone, Debug)]
pub struct AdaGrad {
    loss: LossSpec,
    eta: f64,
    w: Vec<f64>,
    acc: Vec<f64>,
    pending: Option<Pending>,
}

impl AdaGrad {
    pub fn new(loss: LossSpec, eta: f64, dim: usize) -> Result<Self> {
        check_step(eta)?;
        Ok(AdaGrad { loss, eta, w: vec![0.0; dim], acc: vec![0.0; dim], pending: None })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// Per-coordinate sums of squared gradients.
    pub fn accumulator(&self) -> &[f64] {
        &self.acc
    }
}

impl OnlineLearner for AdaGrad {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn predict(&mut self, x: &SparseVec) -> Result<f64> {
        begin_round(&self.pending, self.w.len(), x)?;
        let prediction = x.dot_dense(&self.w);
        self.pending = Some(Pending { x: x.clone(), prediction });
        Ok(prediction)
    }

    fn learn(&mut self, y: f64) -> Result<Feedback> {
        let Pending { x, prediction } = take_pending(&mut self.pending)?;
        let (loss, dloss) = self.loss.eval(prediction, y);
        for (i, xi) in x.iter() {
            let g = dloss * xi;
            self.acc[i] += g * g;
            if self.acc[i] > 0.0 {
                self.w[i] -= self.eta * g / self.acc[i].sqrt();
            }
        }
        Ok(Feedback { prediction, loss, dloss })
    }
}

/// Feeds `D^{-1/2} x` to the inner learner, where `D` starts at `0.1 I`
/// and accumulates the squared gradients of the original problem.
#[derive(Clone, Debug)]
pub struct DiagPrecondition<L> {
    inner: L,
    diag: Vec<f64>,
    pending: Option<SparseVec>,
}

impl<L: OnlineLearner> DiagPrecondition<L> {
    pub fn new(inner: L) -> Self {
        let d = inner.dim();
        DiagPrecondition { inner, diag: vec![DIAG_FLOOR; d], pending: None }
    }

    pub fn inner(&self) -> &L {
        &self.inner
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// `D^{-1/2} x` under the current `D`.
    pub fn transform(&self, x: &SparseVec) -> SparseVec {
        let scale: Vec<f64> = x.indices().iter().map(|&i| 1.0 / self.diag[i].sqrt()).collect();
        SparseVec::new(x.dim(), x.indices().to_vec(), x.values().iter().zip(&scale).map(|(v, s)| v * s).collect())
            .expect("same support as a valid vector")
    }
}

impl<L: OnlineLearner> OnlineLearner for DiagPrecondition<L> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn predict(&mut self, x: &SparseVec) -> Result<f64> {
        if self.pending.is_some() {
            return Err(Error::input("predict called twice without learning the label"));
        }
        if x.dim() != self.dim() {
            return Err(Error::input(format!("example has dimension {}, expected {}", x.dim(), self.dim())));
        }
        let p = self.inner.predict(&self.transform(x))?;
        self.pending = Some(x.clone());
        Ok(p)
    }

    fn learn(&mut self, y: f64) -> Result<Feedback> {
        let x = self.pending.take().ok_or_else(|| Error::input("learn called without a pending prediction"))?;
        let fb = self.inner.learn(y)?;
        for (i, xi) in x.iter() {
            let g = fb.dloss * xi;
            self.diag[i] += g * g;
        }
        Ok(fb)
    }
}

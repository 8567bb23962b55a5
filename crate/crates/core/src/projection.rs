//! Projection onto the band `{w : |w^T x| <= C}` in the norm induced by a
//! PSD matrix `A`.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, eig_sym, Mat, SymMatrix};
use crate::sketch::Sketch;
use crate::sparse_vec::SparseVec;

/// Eigenvalues below this fraction of the largest are treated as zero by
/// the pseudoinverse.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Relative residual below which `x` counts as lying in `range(A)`.
pub const RANGE_TOL: f64 = 1e-8;

/// Denominators at or below this fraction of `x^T x` are degenerate.
pub const EPS_DEN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult {
    pub w: Vec<f64>,
    /// The multiplier applied to the correction direction.
    pub gamma: f64,
    /// Whether `u` was outside the band.
    pub clipped: bool,
}

/// `sgn(y) max(|y| - C, 0)`
pub fn tau_c(y: f64, c: f64) -> f64 {
    let excess = (y.abs() - c).max(0.0);
    if y < 0.0 {
        -excess
    } else {
        excess
    }
}

/// Moore-Penrose pseudoinverse of a PSD matrix.
pub fn pseudo_inverse(a: &SymMatrix) -> Result<Mat> {
    let n = a.n();
    let eig = eig_sym(a)?;
    let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let mut out = SymMatrix::zeros(n);
    if top == 0.0 {
        return Ok(out.into_mat());
    }
    for (k, &lam) in eig.values.iter().enumerate() {
        if lam > PINV_CUTOFF * top {
            out.rank_one_update(1.0 / lam, eig.vectors.row(k));
        }
    }
    Ok(out.into_mat())
}

/// Projection in the `A`-norm for any PSD `A`, through the pseudoinverse.
/// When `x` leaves `range(A)` the shift runs along the null-space
/// component of `x`, which costs nothing in the `A`-norm.
pub fn project_full(u: &[f64], x: &[f64], a: &SymMatrix, c: f64) -> Result<ProjectionResult> {
    let pinv = pseudo_inverse(a)?;
    project_with_pinv(u, x, a, &pinv, c)
}

/// As [`project_full`] with a precomputed pseudoinverse of `a`.
pub fn project_with_pinv(u: &[f64], x: &[f64], a: &SymMatrix, pinv: &Mat, c: f64) -> Result<ProjectionResult> {
    check(u, x, a.n())?;
    let xx = dot(x, x);
    let pinv_x = pinv.mul_vec(x);
    let a_pinv_x = a.mul_vec(&pinv_x);
    let resid: f64 = x.iter().zip(&a_pinv_x).map(|(xi, yi)| (xi - yi) * (xi - yi)).sum();
    if resid.sqrt() <= RANGE_TOL * xx.sqrt() {
        Ok(shift(u, x, &pinv_x, c))
    } else {
        let p_x = pinv.mul_vec(&a.mul_vec(x));
        let null: Vec<f64> = x.iter().zip(&p_x).map(|(xi, pi)| xi - pi).collect();
        Ok(shift(u, x, &null, c))
    }
}

/// Projection when `A^{-1}` is available (positive-definite `A`).
pub fn project_with_inverse(u: &[f64], x: &[f64], a_inv: &SymMatrix, c: f64) -> Result<ProjectionResult> {
    check(u, x, a_inv.n())?;
    let dir = a_inv.mul_vec(x);
    Ok(shift(u, x, &dir, c))
}

/// `w = u - tau_C(u^T x) / (x^T dir) * dir`
fn shift(u: &[f64], x: &[f64], dir: &[f64], c: f64) -> ProjectionResult {
    let t = tau_c(dot(u, x), c);
    if t == 0.0 {
        return ProjectionResult { w: u.to_vec(), gamma: 0.0, clipped: false };
    }
    let gamma = t / dot(x, dir);
    let mut w = u.to_vec();
    axpy(-gamma, dir, &mut w);
    ProjectionResult { w, gamma, clipped: true }
}

fn check(u: &[f64], x: &[f64], n: usize) -> Result<()> {
    if u.len() != n || x.len() != n {
        return Err(Error::input(format!(
            "dimension mismatch: u has {}, x has {}, A is {n}x{n}",
            u.len(),
            x.len()
        )));
    }
    if x.iter().all(|v| *v == 0.0) {
        return Err(Error::input("cannot project onto the band of a zero vector"));
    }
    Ok(())
}

/// Projection in the norm of `A = alpha I + S^T S`, using only `S x` and
/// `H = (alpha I + S S^T)^{-1}`. The multiplier absorbs the factor
/// `1/alpha` of `A^{-1}`, so `w = u - gamma (x - S^T H S x)`.
///
/// Returns [`Error::Degenerate`] when `x^T x - x̂^T H x̂` is numerically zero.
pub fn project_sketched<S: Sketch + ?Sized>(u: &[f64], x: &SparseVec, sketch: &S, c: f64) -> Result<ProjectionResult> {
    if u.len() != sketch.dim() || x.dim() != sketch.dim() {
        return Err(Error::input("dimension mismatch in sketched projection"));
    }
    let xx = x.norm_sq();
    if xx == 0.0 {
        return Err(Error::input("cannot project onto the band of a zero vector"));
    }
    let t = tau_c(x.dot_dense(u), c);
    if t == 0.0 {
        return Ok(ProjectionResult { w: u.to_vec(), gamma: 0.0, clipped: false });
    }
    let x_hat = sketch.project(x);
    let h_x_hat = sketch.apply_h(&x_hat);
    let den = xx - dot(&x_hat, &h_x_hat);
    if !(den > EPS_DEN * xx) {
        return Err(Error::degenerate(format!("projection denominator {den:.3e} vanishes")));
    }
    let gamma = t / den;
    let mut w = u.to_vec();
    x.axpy_into(-gamma, &mut w);
    sketch.lift(&h_x_hat, gamma, &mut w);
    Ok(ProjectionResult { w, gamma, clipped: true })
}

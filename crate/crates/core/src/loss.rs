//! Scalar losses of the prediction `z = w^T x` against a label `y`.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `(z - y)^2`
    Square,
    /// `|z - y|`, convex with no curvature.
    AbsoluteLinear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Bound on admissible predictions.
    pub c: f64,
    /// Bound on `|l'(z)|` for `|z|, |y| <= c`.
    pub lipschitz: f64,
}

impl LossSpec {
    pub fn square(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::config(format!("prediction bound C must be positive, got {c}")));
        }
        Ok(LossSpec { kind: LossKind::Square, c, lipschitz: 4.0 * c })
    }

    pub fn absolute_linear(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::config(format!("prediction bound C must be positive, got {c}")));
        }
        Ok(LossSpec { kind: LossKind::AbsoluteLinear, c, lipschitz: 1.0 })
    }

    /// Returns `(loss, dloss/dz)`.
    pub fn eval(&self, z: f64, y: f64) -> (f64, f64) {
        match self.kind {
            LossKind::Square => {
                let r = z - y;
                (r * r, 2.0 * r)
            }
            LossKind::AbsoluteLinear => {
                let r = z - y;
                let d = if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (r.abs(), d)
            }
        }
    }

    /// The curvature constant `sigma` of the loss over `|z| <= C`.
    pub fn curvature_sigma(&self) -> f64 {
        match self.kind {
            LossKind::Square => 1.0 / (8.0 * self.c * self.c),
            LossKind::AbsoluteLinear => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn square_examples() {
        let s = LossSpec::square(1.0).unwrap();
        assert_eq!(s.eval(0.0, 0.0), (0.0, 0.0));
        assert_eq!(s.eval(2.0, 1.0), (1.0, 2.0));
        assert_eq!(s.eval(-1.0, 1.0), (4.0, -4.0));
    }

    #[test]
    fn sigma_values() {
        assert_eq!(LossSpec::square(1.0).unwrap().curvature_sigma(), 0.125);
        assert_eq!(LossSpec::square(2.0).unwrap().curvature_sigma(), 0.03125);
        assert_eq!(LossSpec::absolute_linear(1.0).unwrap().curvature_sigma(), 0.0);
    }

    #[test]
    fn rejects_nonpositive_bound() {
        assert!(LossSpec::square(0.0).is_err());
        assert!(LossSpec::square(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn derivative_bounded_on_band(c in 0.1f64..10.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let s = LossSpec::square(c).unwrap();
            let (_, d) = s.eval(a * c, b * c);
            prop_assert!(d.abs() <= s.lipschitz + 1e-12);
        }

        #[test]
        fn finite_difference(z in -3.0f64..3.0, y in -3.0f64..3.0) {
            let s = LossSpec::square(3.0).unwrap();
            let h = 1e-5;
            let fd = (s.eval(z + h, y).0 - s.eval(z - h, y).0) / (2.0 * h);
            prop_assert!((fd - s.eval(z, y).1).abs() <= 1e-6);
        }

        #[test]
        fn square_curvature_inequality(
            c in 0.5f64..3.0,
            zu in -1.0f64..1.0,
            zw in -1.0f64..1.0,
            y in -1.0f64..1.0,
        ) {
            // With x fixed, f(w) depends on w only through z = w^T x and the
            // gradient term reduces to l'(z_u) (z_w - z_u).
            let s = LossSpec::square(c).unwrap();
            let (zu, zw, y) = (zu * c, zw * c, y * c);
            let (fu, du) = s.eval(zu, y);
            let (fw, _) = s.eval(zw, y);
            let lin = du * (zw - zu);
            let lower = fu + lin + 0.5 * s.curvature_sigma() * lin * lin;
            prop_assert!(fw >= lower - 1e-9);
        }
    }
}

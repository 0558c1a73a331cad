//! Adaptive Simpson quadrature.
//!
//! The integrands in this crate are smooth after the callers' endpoint
//! substitutions, so classic adaptive Simpson with Richardson correction is
//! enough: each panel is accepted when the two-half refinement changes the
//! panel value by less than the per-panel tolerance, and the local defect
//! |S2 - S1|/15 is accumulated into a global error estimate.

use crate::error::{Error, Result};

/// Integral value with an accumulated error estimate.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub abs_error: f64,
    /// Number of accepted panels.
    pub panels: usize,
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    (fa + 4.0 * fm + fb) * h / 6.0
}

struct Worker<'a> {
    f: &'a dyn Fn(f64) -> f64,
    tol: f64,
    max_depth: u32,
    error: f64,
    panels: usize,
    depth_exceeded: bool,
}

impl Worker<'_> {
    fn run(&mut self, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = (self.f)(lm);
        let frm = (self.f)(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let refined = left + right;
        let defect = (refined - whole) / 15.0;
        if defect.abs() <= self.tol || depth >= self.max_depth {
            if depth >= self.max_depth && defect.abs() > self.tol {
                self.depth_exceeded = true;
            }
            self.error += defect.abs();
            self.panels += 1;
            return refined + defect;
        }
        self.run(a, m, fa, flm, fm, left, depth + 1) + self.run(m, b, fm, frm, fb, right, depth + 1)
    }
}

/// Integrate `f` over `[a, b]` with per-panel absolute tolerance `tol`.
///
/// Fails with a numeric error when the recursion depth cap is hit while the
/// local defect still exceeds the tolerance (a symptom of an unhandled
/// singularity; callers substitute those away first).
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numeric(format!("adaptive_simpson: invalid interval [{a}, {b}]")));
    }
    if a == b {
        return Ok(Quadrature { value: 0.0, abs_error: 0.0, panels: 0 });
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    if !(fa.is_finite() && fb.is_finite() && fm.is_finite()) {
        return Err(Error::Numeric(format!(
            "adaptive_simpson: integrand not finite at endpoints of [{a}, {b}]"
        )));
    }
    let whole = simpson(fa, fm, fb, b - a);
    let mut worker = Worker { f, tol, max_depth: 48, error: 0.0, panels: 0, depth_exceeded: false };
    let value = worker.run(a, b, fa, fm, fb, whole, 0);
    if worker.depth_exceeded {
        return Err(Error::Numeric(format!(
            "adaptive_simpson: depth cap hit on [{a}, {b}] with defect above {tol:e}; \
             worst-case accumulated error {:e}",
            worker.error
        )));
    }
    Ok(Quadrature { value, abs_error: worker.error, panels: worker.panels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        // Simpson is exact on cubics; the Richardson correction keeps that.
        let q = adaptive_simpson(&|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-12).unwrap();
        assert_relative_eq!(q.value, 2.0, max_relative = 1e-13);
    }

    #[test]
    fn exponential_integral() {
        let q = adaptive_simpson(&|x| (-x).exp(), 0.0, 30.0, 1e-12).unwrap();
        assert_relative_eq!(q.value, 1.0, max_relative = 1e-10);
        assert!(q.abs_error < 1e-8);
    }

    #[test]
    fn oscillatory_integral() {
        let q = adaptive_simpson(&|x| (10.0 * x).sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        let exact = (1.0 - (10.0 * std::f64::consts::PI).cos()) / 10.0;
        assert_relative_eq!(q.value, exact, max_relative = 1e-9, epsilon = 1e-12);
    }

    #[test]
    fn substituted_sqrt_singularity() {
        // Integral of 1/sqrt(s) on (0,1] equals 2; after s = w^2 the integrand
        // is constant 2. This is the same substitution the geodesic solver uses.
        let q = adaptive_simpson(&|_w| 2.0, 0.0, 1.0, 1e-12).unwrap();
        assert_relative_eq!(q.value, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn unresolved_singularity_is_an_error() {
        let res = adaptive_simpson(&|x| 1.0 / x.max(1e-300).sqrt(), 1e-300, 1.0, 1e-12);
        assert!(res.is_err());
    }

    #[test]
    fn empty_interval() {
        let q = adaptive_simpson(&|x| x, 3.0, 3.0, 1e-12).unwrap();
        assert_eq!(q.value, 0.0);
    }
}

//! Cusp profile construction and certification.
//!
//! A profile T glues the exact hyperbolic neck `T(t) = e^{-t}` (for `t <= 0`)
//! to the perturbed cusp `T(t) = e^{-t} t^alpha / L(t)` (for `t >= a`, the
//! glue end) through a quintic polynomial in log T on `[0, a]`. Working in
//! log space matters: both outer regions have log T within a slowly varying
//! correction of `-t`, so a degree-5 polynomial tracks them easily, whereas a
//! quintic in T itself cannot follow exponential decay across a long glue
//! interval and its curvature escapes any pinching window.
//!
//! The glue end is found on a doubling ladder and the result is certified on
//! a dense grid: T must be strictly decreasing and the curvature
//! `K = -T''/T` must stay inside `[-B^2, -A^2]`.

use crate::error::{Error, Result};
use crate::svf::SlowlyVaryingSpec;

/// Value, first and second derivative of T, and the curvature -T''/T.
#[derive(Debug, Clone, Copy)]
pub struct ProfileJet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub curvature: f64,
}

/// A grid point where the certificate failed, with the offending values.
#[derive(Debug, Clone, Copy)]
pub struct CertFailure {
    pub t: f64,
    pub curvature: f64,
    pub d1: f64,
}

/// Grid report behind an accepted (or rejected) profile.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub grid_points: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Extremes of K = -T''/T over the grid.
    pub min_curvature: f64,
    pub max_curvature: f64,
    /// Largest T' over the grid; negative iff T is strictly decreasing.
    pub max_d1: f64,
    /// Relative seam mismatches (value, T', T'') at t = 0 and t = a.
    pub seam_residual: f64,
    pub failures: Vec<CertFailure>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.seam_residual <= 1e-10
    }
}

/// Certified cusp profile.
#[derive(Debug, Clone)]
pub struct CuspProfile {
    alpha: f64,
    l: SlowlyVaryingSpec,
    glue_start: f64,
    glue_end: f64,
    /// Coefficients of phi(t) = log T(t) on the glue as a polynomial in
    /// x = t / glue_end: phi = sum_i coeffs[i] * x^i.
    glue_coeffs: [f64; 6],
    pinch_a: f64,
    pinch_b: f64,
    certificate: Certificate,
    hyperbolic_mode: bool,
}

/// Construction parameters; `glue_guess` seeds the ladder and
/// `grid_points` sets the certificate density.
#[derive(Debug, Clone)]
pub struct ProfileParams {
    pub alpha: f64,
    pub l: SlowlyVaryingSpec,
    pub pinch_a: f64,
    pub pinch_b: f64,
    pub glue_guess: Option<f64>,
    pub grid_points: usize,
}

impl ProfileParams {
    pub fn new(alpha: f64, l: SlowlyVaryingSpec, pinch_a: f64, pinch_b: f64) -> Self {
        ProfileParams { alpha, l, pinch_a, pinch_b, glue_guess: None, grid_points: 10_000 }
    }
}

const LADDER_CAP: u32 = 16;

impl CuspProfile {
    /// The unperturbed profile `T(t) = e^{-t}` everywhere (constant curvature
    /// -1). Used as an exact oracle by the geodesic solver tests; not
    /// reachable through `build` since it corresponds to alpha = 0.
    pub fn hyperbolic() -> Self {
        CuspProfile {
            alpha: 0.0,
            l: SlowlyVaryingSpec::constant(1.0),
            glue_start: 0.0,
            glue_end: 0.0,
            glue_coeffs: [0.0; 6],
            pinch_a: 1.0,
            pinch_b: 1.0,
            certificate: Certificate {
                grid_points: 0,
                t_lo: 0.0,
                t_hi: 0.0,
                min_curvature: -1.0,
                max_curvature: -1.0,
                max_d1: -1.0,
                seam_residual: 0.0,
                failures: Vec::new(),
            },
            hyperbolic_mode: true,
        }
    }

    /// Build a certified profile with default ladder seed and grid density.
    pub fn build(
        alpha: f64,
        l: SlowlyVaryingSpec,
        pinch_a: f64,
        pinch_b: f64,
    ) -> Result<CuspProfile> {
        Self::build_with(ProfileParams::new(alpha, l, pinch_a, pinch_b))
    }

    /// Build a certified profile.
    ///
    /// The glue end is the first rung of the doubling ladder starting at
    /// `max(4 alpha + 1, glue_guess)` whose certificate passes on the grid.
    pub fn build_with(params: ProfileParams) -> Result<CuspProfile> {
        let ProfileParams { alpha, l, pinch_a, pinch_b, glue_guess, grid_points } = params;
        if !(alpha > 1.0) {
            return Err(Error::Validation(format!("profile alpha must exceed 1, got {alpha}")));
        }
        if !(pinch_a > 0.0 && pinch_a < 1.0 && pinch_b > 1.0) {
            return Err(Error::Validation(format!(
                "pinching must satisfy 0 < A < 1 < B, got A = {pinch_a}, B = {pinch_b}"
            )));
        }
        if grid_points < 100 {
            return Err(Error::Validation("certificate grid needs at least 100 points".into()));
        }
        l.validate()?;

        let base = (4.0 * alpha + 1.0).max(glue_guess.unwrap_or(0.0));
        let mut last_failures: Vec<CertFailure> = Vec::new();
        let mut glue_end = base;
        for _ in 0..=LADDER_CAP {
            let candidate = CuspProfile {
                alpha,
                l: l.clone(),
                glue_start: 0.0,
                glue_end,
                glue_coeffs: glue_coefficients(alpha, &l, glue_end),
                pinch_a,
                pinch_b,
                certificate: Certificate {
                    grid_points: 0,
                    t_lo: 0.0,
                    t_hi: 0.0,
                    min_curvature: 0.0,
                    max_curvature: 0.0,
                    max_d1: 0.0,
                    seam_residual: 0.0,
                    failures: Vec::new(),
                },
                hyperbolic_mode: false,
            };
            let cert = candidate.certify(grid_points);
            if cert.passed() {
                return Ok(CuspProfile { certificate: cert, ..candidate });
            }
            last_failures = cert.failures;
            glue_end *= 2.0;
        }
        let sample: Vec<String> = last_failures
            .iter()
            .take(5)
            .map(|f| format!("(t = {:.4}, K = {:.4}, T' = {:.3e})", f.t, f.curvature, f.d1))
            .collect();
        Err(Error::Validation(format!(
            "profile certificate failed up the whole ladder (alpha = {alpha}, A = {pinch_a}, \
             B = {pinch_b}); failing points at the last rung: {}",
            sample.join(", ")
        )))
    }

    fn certify(&self, grid_points: usize) -> Certificate {
        let a = self.glue_end;
        let t_lo = -2.0;
        let t_hi = a + 50.0;
        let mut min_k = f64::INFINITY;
        let mut max_k = f64::NEG_INFINITY;
        let mut max_d1 = f64::NEG_INFINITY;
        let mut failures = Vec::new();
        let lo_k = -self.pinch_b * self.pinch_b;
        let hi_k = -self.pinch_a * self.pinch_a;
        for i in 0..grid_points {
            let t = t_lo + (t_hi - t_lo) * i as f64 / (grid_points - 1) as f64;
            let jet = self.jet(t);
            min_k = min_k.min(jet.curvature);
            max_k = max_k.max(jet.curvature);
            max_d1 = max_d1.max(jet.d1);
            let bad_k = !(lo_k <= jet.curvature && jet.curvature <= hi_k);
            let bad_slope = !(jet.d1 < 0.0);
            if bad_k || bad_slope {
                if failures.len() < 64 {
                    failures.push(CertFailure { t, curvature: jet.curvature, d1: jet.d1 });
                }
            }
        }
        let seam_residual = self.seam_residual();
        Certificate {
            grid_points,
            t_lo,
            t_hi,
            min_curvature: min_k,
            max_curvature: max_k,
            max_d1,
            seam_residual,
            failures,
        }
    }

    /// Worst relative mismatch of (T, T', T'') across the two seams.
    fn seam_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        let eps = 1e-9;
        for &seam in &[self.glue_start, self.glue_end] {
            let left = self.jet(seam - eps);
            let right = self.jet(seam + eps);
            for (l, r) in [
                (left.value, right.value),
                (left.d1, right.d1),
                (left.d2, right.d2),
            ] {
                // Values 1e-9 apart of a smooth function: first-order drift is
                // ~2e-9 * |derivative|; normalize and subtract that allowance.
                let scale = l.abs().max(r.abs()).max(1e-300);
                let rel = ((l - r).abs() / scale - 4.0 * eps).max(0.0);
                worst = worst.max(rel);
            }
        }
        worst
    }

    /// log T and its first two t-derivatives.
    fn phi_jet(&self, t: f64) -> (f64, f64, f64) {
        if self.hyperbolic_mode || t <= self.glue_start {
            return (-t, -1.0, 0.0);
        }
        if t < self.glue_end {
            let a = self.glue_end;
            let x = t / a;
            let c = &self.glue_coeffs;
            let mut p = 0.0;
            let mut dp = 0.0;
            let mut ddp = 0.0;
            for i in (0..6).rev() {
                ddp = ddp * x + 2.0 * dp;
                dp = dp * x + p;
                p = p * x + c[i];
            }
            (p, dp / a, ddp / (a * a))
        } else {
            let jet = self.l.jet(t);
            let l1 = jet.log_d1();
            let l2 = jet.log_d2();
            let phi = -t + self.alpha * t.ln() - jet.value.ln();
            let dphi = -1.0 + self.alpha / t - l1;
            let ddphi = -self.alpha / (t * t) - l2 + l1 * l1;
            (phi, dphi, ddphi)
        }
    }

    /// T with two derivatives and curvature at t.
    pub fn jet(&self, t: f64) -> ProfileJet {
        let (phi, dphi, ddphi) = self.phi_jet(t);
        let value = phi.exp();
        ProfileJet {
            value,
            d1: dphi * value,
            d2: (ddphi + dphi * dphi) * value,
            curvature: -(ddphi + dphi * dphi),
        }
    }

    pub fn eval_t(&self, t: f64) -> f64 {
        self.phi_jet(t).0.exp()
    }

    /// log T(t); exact in the outer regions, polynomial on the glue.
    pub fn log_t(&self, t: f64) -> f64 {
        self.phi_jet(t).0
    }

    /// d/dt log T(t).
    pub fn dlog_t(&self, t: f64) -> f64 {
        self.phi_jet(t).1
    }

    /// The unique u with T(u) = 1/s.
    pub fn u_of_s(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Validation(format!("u_of_s: s must be positive, got {s}")));
        }
        let target = -s.ln(); // solve log T(u) = -log s
        if target >= 0.0 {
            // 1/s >= 1 lands in the region where T = e^{-t} exactly.
            return Ok(-target);
        }
        let mut lo = 0.0f64;
        let mut hi = 2.0f64;
        let mut expand = 0;
        while self.log_t(hi) > target {
            lo = hi;
            hi *= 2.0;
            expand += 1;
            if expand > 64 {
                return Err(Error::Numeric(format!("u_of_s: no bracket for s = {s:e}")));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let val = self.log_t(mid);
            if (val - target).abs() <= 1e-13 {
                return Ok(mid);
            }
            if val > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi.max(1.0) {
                break;
            }
        }
        let u = 0.5 * (lo + hi);
        // Bisection is limited by f64 resolution of u; the residual in T is
        // |phi'| * ulp(u), far below the 1e-12 relative target.
        Ok(u)
    }

    /// First-order inverse asymptotic: log s + alpha log log s - log L(log s).
    pub fn u_asymptotic(alpha: f64, l: &SlowlyVaryingSpec, s: f64) -> f64 {
        let ls = s.ln();
        ls + alpha * ls.ln() - l.eval(ls).ln()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn l(&self) -> &SlowlyVaryingSpec {
        &self.l
    }

    /// Glue end, the point after which the perturbed closed form holds.
    pub fn glue_end(&self) -> f64 {
        self.glue_end
    }

    pub fn glue_coeffs(&self) -> &[f64; 6] {
        &self.glue_coeffs
    }

    pub fn pinch_a(&self) -> f64 {
        self.pinch_a
    }

    pub fn pinch_b(&self) -> f64 {
        self.pinch_b
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    pub fn is_hyperbolic_mode(&self) -> bool {
        self.hyperbolic_mode
    }
}

/// Quintic coefficients for phi = log T on the glue, in x = t/a.
///
/// Matching phi = -t at 0 fixes c0 = 0, c1 = -a, c2 = 0; the cubic-and-up
/// terms solve the three conditions at x = 1 in closed form.
fn glue_coefficients(alpha: f64, l: &SlowlyVaryingSpec, a: f64) -> [f64; 6] {
    let jet = l.jet(a);
    let l1 = jet.log_d1();
    let l2 = jet.log_d2();
    // psi(x) = phi(a x) + a x accumulates the deviation from the neck line.
    let psi1 = alpha * a.ln() - jet.value.ln();
    let dpsi1 = alpha - a * l1;
    let ddpsi1 = -alpha - a * a * (l2 - l1 * l1);
    let c5 = 0.5 * (ddpsi1 - 6.0 * dpsi1 + 12.0 * psi1);
    let c4 = dpsi1 - 3.0 * psi1 - 2.0 * c5;
    let c3 = psi1 - c4 - c5;
    [0.0, -a, 0.0, c3, c4, c5]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference_profile() -> CuspProfile {
        CuspProfile::build(1.5, SlowlyVaryingSpec::constant(1.0), 0.5, 2.0).unwrap()
    }

    #[test]
    fn hyperbolic_mode_is_exact_exponential() {
        let p = CuspProfile::hyperbolic();
        assert_relative_eq!(p.eval_t(-3.0), 3.0f64.exp(), max_relative = 1e-14);
        assert_relative_eq!(p.eval_t(7.0), (-7.0f64).exp(), max_relative = 1e-14);
        for i in 0..100 {
            let t = -5.0 + 0.2 * i as f64;
            assert_relative_eq!(p.jet(t).curvature, -1.0, max_relative = 1e-12);
        }
        assert_relative_eq!(p.u_of_s(5.0f64.exp()).unwrap(), 5.0, max_relative = 1e-12);
    }

    #[test]
    fn ladder_accepts_fourteen_for_reference_parameters() {
        // Regression value: the ladder starts at 4*1.5 + 1 = 7, the rung at 7
        // fails pinching inside the glue, and 14 passes.
        let p = reference_profile();
        assert_eq!(p.glue_end(), 14.0);
        assert!(p.glue_end() > 4.0 * p.alpha());
        assert!(p.certificate().passed());
    }

    #[test]
    fn looser_pinch_accepts_the_guess_rung() {
        // With A = 0.2 the first rung of a guess-8 ladder already certifies;
        // the experiment instances rely on this profile.
        let params = ProfileParams {
            glue_guess: Some(8.0),
            ..ProfileParams::new(1.5, SlowlyVaryingSpec::constant(1.0), 0.2, 2.0)
        };
        let p = CuspProfile::build_with(params).unwrap();
        assert_eq!(p.glue_end(), 8.0);
        assert!(p.certificate().passed());
    }

    #[test]
    fn pre_glue_region_is_exact() {
        let p = reference_profile();
        assert_relative_eq!(p.eval_t(-3.0), 3.0f64.exp(), max_relative = 1e-14);
        assert_relative_eq!(p.jet(-1.0).curvature, -1.0, max_relative = 1e-14);
    }

    #[test]
    fn post_glue_closed_form() {
        let p = reference_profile();
        let t = p.glue_end() + 2.0;
        let expected = (-t).exp() * t.powf(1.5);
        assert_relative_eq!(p.eval_t(t), expected, max_relative = 1e-12);
    }

    #[test]
    fn seams_are_c2() {
        let p = reference_profile();
        assert!(p.certificate().seam_residual <= 1e-10);
        // Finite-difference check of T' across the glue end.
        let a = p.glue_end();
        let h = 1e-6;
        let left = (p.eval_t(a) - p.eval_t(a - h)) / h;
        let right = (p.eval_t(a + h) - p.eval_t(a)) / h;
        assert_relative_eq!(left, right, max_relative = 1e-5);
    }

    #[test]
    fn curvature_matches_finite_differences() {
        let p = reference_profile();
        let t = p.glue_end() + 10.0;
        let jet = p.jet(t);
        let h = 1e-4;
        let ddt = (p.eval_t(t + h) - 2.0 * p.eval_t(t) + p.eval_t(t - h)) / (h * h);
        let k_fd = -ddt / p.eval_t(t);
        assert_relative_eq!(jet.curvature, k_fd, max_relative = 1e-6);
    }

    #[test]
    fn certificate_reports_pinched_curvature() {
        let p = reference_profile();
        let c = p.certificate();
        assert!(c.min_curvature >= -4.0);
        assert!(c.max_curvature <= -0.25);
        assert!(c.max_d1 < 0.0);
    }

    #[test]
    fn slowly_varying_profile_builds() {
        let p = CuspProfile::build(1.5, SlowlyVaryingSpec::power_of_log(1.0), 0.2, 2.0).unwrap();
        assert!(p.certificate().passed());
        let t = p.glue_end() + 5.0;
        let expected = (-t).exp() * t.powf(1.5) / (std::f64::consts::E + t).ln();
        assert_relative_eq!(p.eval_t(t), expected, max_relative = 1e-12);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(CuspProfile::build(0.9, SlowlyVaryingSpec::constant(1.0), 0.5, 2.0).is_err());
        assert!(CuspProfile::build(1.5, SlowlyVaryingSpec::constant(1.0), 1.5, 2.0).is_err());
        assert!(CuspProfile::build(1.5, SlowlyVaryingSpec::constant(1.0), 0.5, 0.5).is_err());
    }

    #[test]
    fn u_inverse_consistency() {
        let p = reference_profile();
        // Grid spanning neck, glue, and cusp regions.
        for i in 0..60 {
            let t = -3.0 + i as f64;
            let s = 1.0 / p.eval_t(t);
            let u = p.u_of_s(s).unwrap();
            assert!((u - t).abs() <= 1e-9, "u(1/T({t})) = {u}");
        }
    }

    #[test]
    fn u_monotone_in_s() {
        let p = reference_profile();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let s = 10f64.powf(rng.gen_range(0.5..12.0));
            let u1 = p.u_of_s(s).unwrap();
            let u2 = p.u_of_s(2.0 * s).unwrap();
            assert!(u2 > u1, "u not monotone at s = {s}");
        }
    }

    #[test]
    fn u_approaches_asymptotic_form() {
        // Residuals against log s + alpha log log s decrease along decades.
        // The gap closes like alpha^2 log log s / log s, which is still 0.34
        // at s = 1e8 (frozen below); only the trend is a sharp statement.
        let params = ProfileParams {
            glue_guess: Some(8.0),
            ..ProfileParams::new(1.5, SlowlyVaryingSpec::constant(1.0), 0.2, 2.0)
        };
        let p = CuspProfile::build_with(params).unwrap();
        let l = SlowlyVaryingSpec::constant(1.0);
        let mut prev = f64::INFINITY;
        for e in 3..=9 {
            let s = 10f64.powi(e);
            let res = (p.u_of_s(s).unwrap() - CuspProfile::u_asymptotic(1.5, &l, s)).abs();
            assert!(res < prev, "residual not decreasing at s = 1e{e}: {res} vs {prev}");
            prev = res;
        }
        let res8 = p.u_of_s(1e8).unwrap() - CuspProfile::u_asymptotic(1.5, &l, 1e8);
        assert_relative_eq!(res8, 0.341_649_53, max_relative = 1e-5);
    }

    #[test]
    fn strict_decrease_on_grid() {
        let p = reference_profile();
        let mut prev = p.eval_t(-2.0);
        for i in 1..2000 {
            let t = -2.0 + 30.0 * i as f64 / 1999.0;
            let v = p.eval_t(t);
            assert!(v < prev, "T not strictly decreasing at t = {t}");
            prev = v;
        }
    }
}

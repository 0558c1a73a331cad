//! Slowly varying functions from a closed-form family.
//!
//! The family is restricted to constants, powers of `log(e + t)`, and powers
//! of the iterated logarithm `log log(e^e + t)`. Every member is positive and
//! C^2 on `t >= 0`, its derivatives decay at infinity, and the ratio
//! `L(lambda t)/L(t)` tends to 1 for every fixed `lambda > 0`. Values below
//! the freeze floor `t_min` are held constant so the function stays positive
//! even when callers wander below the regime of interest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value of L together with its first two derivatives at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LJet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl LJet {
    /// Logarithmic derivative L'/L.
    pub fn log_d1(&self) -> f64 {
        self.d1 / self.value
    }

    /// Second logarithmic combination L''/L.
    pub fn log_d2(&self) -> f64 {
        self.d2 / self.value
    }
}

/// A slowly varying function given in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum SlowlyVaryingSpec {
    /// L(t) = c.
    Constant { c: f64 },
    /// L(t) = (log(e + t))^beta.
    PowerOfLog {
        beta: f64,
        #[serde(default)]
        t_min: Option<f64>,
    },
    /// L(t) = (log log(e^e + t))^beta.
    IteratedLog {
        beta: f64,
        #[serde(default)]
        t_min: Option<f64>,
    },
}

/// One grid point at which the Potter bound would need a constant above the cap.
#[derive(Debug, Clone, Copy)]
pub struct PotterViolation {
    pub t: f64,
    pub required_c: f64,
}

/// Result of checking the two-sided Potter bound `1/(C t^theta) <= L(t) <= C t^theta`
/// over a grid.
#[derive(Debug, Clone)]
pub struct PotterReport {
    pub theta: f64,
    /// Smallest constant (>= 1) that satisfies the bound on the whole grid.
    pub c_theta: f64,
    pub cap: f64,
    /// Grid points where the required constant exceeds the cap.
    pub violations: Vec<PotterViolation>,
    /// Largest violating t, if any; all violations occur at or below it.
    pub max_violating_t: Option<f64>,
}

impl SlowlyVaryingSpec {
    pub fn constant(c: f64) -> Self {
        SlowlyVaryingSpec::Constant { c }
    }

    pub fn power_of_log(beta: f64) -> Self {
        SlowlyVaryingSpec::PowerOfLog { beta, t_min: None }
    }

    pub fn iterated_log(beta: f64) -> Self {
        SlowlyVaryingSpec::IteratedLog { beta, t_min: None }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SlowlyVaryingSpec::Constant { c } => {
                if !(c > 0.0) || !c.is_finite() {
                    return Err(Error::Validation(format!(
                        "constant slowly varying function needs c > 0, got {c}"
                    )));
                }
            }
            SlowlyVaryingSpec::PowerOfLog { beta, t_min }
            | SlowlyVaryingSpec::IteratedLog { beta, t_min } => {
                if !beta.is_finite() {
                    return Err(Error::Validation(format!("beta must be finite, got {beta}")));
                }
                if let Some(t) = t_min {
                    if !t.is_finite() || t < 0.0 {
                        return Err(Error::Validation(format!(
                            "t_min must be finite and nonnegative, got {t}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Freeze floor: below this argument the function is held constant.
    ///
    /// The closed forms are defined and C^2 on all of `t >= 0` (the inner
    /// logarithms are offset so they are at least 1 there), so the default
    /// floor is 0; configs may raise it.
    pub fn t_min(&self) -> f64 {
        match *self {
            SlowlyVaryingSpec::Constant { .. } => 0.0,
            SlowlyVaryingSpec::PowerOfLog { t_min, .. }
            | SlowlyVaryingSpec::IteratedLog { t_min, .. } => t_min.unwrap_or(0.0),
        }
    }

    /// L(t) with two derivatives; constant (zero derivatives) below `t_min`.
    pub fn jet(&self, t: f64) -> LJet {
        let floor = self.t_min();
        if t < floor {
            let frozen = self.jet_unfrozen(floor);
            return LJet { value: frozen.value, d1: 0.0, d2: 0.0 };
        }
        self.jet_unfrozen(t)
    }

    fn jet_unfrozen(&self, t: f64) -> LJet {
        match *self {
            SlowlyVaryingSpec::Constant { c } => LJet { value: c, d1: 0.0, d2: 0.0 },
            SlowlyVaryingSpec::PowerOfLog { beta, .. } => {
                // L = g^beta with g = log(e + t).
                let v = std::f64::consts::E + t;
                let g = v.ln();
                let value = g.powf(beta);
                let d1 = beta * g.powf(beta - 1.0) / v;
                let d2 = beta * (beta - 1.0) * g.powf(beta - 2.0) / (v * v)
                    - beta * g.powf(beta - 1.0) / (v * v);
                LJet { value, d1, d2 }
            }
            SlowlyVaryingSpec::IteratedLog { beta, .. } => {
                // L = g2^beta with g2 = log g1, g1 = log(e^e + t).
                let v = std::f64::consts::E.exp() + t;
                let g1 = v.ln();
                let g2 = g1.ln();
                let value = g2.powf(beta);
                // g2' = 1/(v g1); g2'' = -(g1 + 1)/(v^2 g1^2).
                let g2p = 1.0 / (v * g1);
                let g2pp = -(g1 + 1.0) / (v * v * g1 * g1);
                let d1 = beta * g2.powf(beta - 1.0) * g2p;
                let d2 = beta * (beta - 1.0) * g2.powf(beta - 2.0) * g2p * g2p
                    + beta * g2.powf(beta - 1.0) * g2pp;
                LJet { value, d1, d2 }
            }
        }
    }

    /// L(t).
    pub fn eval(&self, t: f64) -> f64 {
        self.jet(t).value
    }

    /// Smallest constant C >= 1 with `1/(C t^theta) <= L(t) <= C t^theta` on the
    /// grid, plus the grid points where C would have to exceed `cap`.
    pub fn potter_report(&self, theta: f64, t_grid: &[f64], cap: f64) -> Result<PotterReport> {
        if t_grid.is_empty() {
            return Err(Error::Validation("potter_report: empty grid".into()));
        }
        if !(theta > 0.0) {
            return Err(Error::Validation(format!(
                "potter_report: theta must be positive, got {theta}"
            )));
        }
        let mut c_theta: f64 = 1.0;
        let mut violations = Vec::new();
        for &t in t_grid {
            if t < 1.0 {
                return Err(Error::Validation(format!(
                    "potter_report: grid values must be >= 1, got {t}"
                )));
            }
            let l = self.eval(t);
            let pow = t.powf(theta);
            let required = (l / pow).max(1.0 / (pow * l)).max(1.0);
            c_theta = c_theta.max(required);
            if required > cap {
                violations.push(PotterViolation { t, required_c: required });
            }
        }
        let max_violating_t = violations
            .iter()
            .map(|v| v.t)
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))));
        Ok(PotterReport { theta, c_theta, cap, violations, max_violating_t })
    }

    /// The unique `a_k >= 1` with `a_k^beta / L(a_k) = k`, by bracketed bisection.
    ///
    /// The map is continuous and eventually strictly increasing (beta in (0,1)
    /// dominates the slowly varying denominator), so an expanding bracket plus
    /// bisection is unconditionally safe. Relative residual <= 1e-10.
    pub fn a_sequence(&self, beta: f64, k: u64) -> Result<f64> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Validation(format!(
                "a_sequence: beta must lie in (0,1), got {beta}"
            )));
        }
        if k == 0 {
            return Err(Error::Validation("a_sequence: k must be positive".into()));
        }
        let target = k as f64;
        let f = |a: f64| a.powf(beta) / self.eval(a);
        let mut lo = 1.0f64;
        let mut hi = 2.0f64;
        // The value at 1 can exceed small targets when L(1) < 1; widen downward
        // is impossible (domain floor), so accept lo itself in that corner.
        if f(lo) >= target {
            return Ok(lo);
        }
        let mut expand = 0;
        while f(hi) < target {
            hi *= 2.0;
            expand += 1;
            if expand > 4000 {
                return Err(Error::Numeric(format!(
                    "a_sequence: bracket expansion failed for k = {k} (hi = {hi:e})"
                )));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let val = f(mid);
            if ((val - target) / target).abs() <= 1e-10 {
                return Ok(mid);
            }
            if val < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo) <= 1e-14 * hi.max(1.0) {
                return Ok(0.5 * (lo + hi));
            }
        }
        Err(Error::Numeric(format!(
            "a_sequence: no convergence for k = {k}, last bracket [{lo}, {hi}]"
        )))
    }
}

/// Log-spaced grid on [lo, hi] with `n` points, inclusive at both ends.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_is_constant() {
        let l = SlowlyVaryingSpec::constant(1.0);
        assert_eq!(l.eval(100.0), 1.0);
        assert_eq!(l.jet(5.0).d1, 0.0);
    }

    #[test]
    fn power_of_log_known_values() {
        let l = SlowlyVaryingSpec::power_of_log(1.0);
        // log(e + t) = 2 at t = e^2 - e.
        let t = std::f64::consts::E * (std::f64::consts::E - 1.0);
        assert_relative_eq!(l.eval(t), 2.0, max_relative = 1e-12);

        let linv = SlowlyVaryingSpec::power_of_log(-1.0);
        // 1/log(e + 1e6), evaluated independently in high precision.
        assert_relative_eq!(linv.eval(1e6), 0.072_382_399_408_904_45, max_relative = 1e-12);
    }

    #[test]
    fn eval_matches_independent_formula() {
        // Independent evaluation path: log(e + t) = 1 + log1p(t/e), and powers
        // via exp(beta * log(.)). 1e3 seeded random points per variant.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for beta in [0.5, 1.0, -1.0, 2.0] {
            let l = SlowlyVaryingSpec::power_of_log(beta);
            for _ in 0..1000 {
                let t = 10f64.powf(rng.gen_range(0.0..9.0));
                let g = 1.0 + (t / std::f64::consts::E).ln_1p();
                let reference = (beta * g.ln()).exp();
                assert_relative_eq!(l.eval(t), reference, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let specs = [
            SlowlyVaryingSpec::power_of_log(1.5),
            SlowlyVaryingSpec::power_of_log(-1.0),
            SlowlyVaryingSpec::iterated_log(0.7),
        ];
        for l in &specs {
            for &t in &[1.0f64, 10.0, 1e4] {
                let h = 1e-5 * t.max(1.0);
                let jet = l.jet(t);
                let d1 = (l.eval(t + h) - l.eval(t - h)) / (2.0 * h);
                // Differencing d1 keeps the second-derivative check out of
                // the eps/h^2 noise floor of a direct second difference.
                let d2 = (l.jet(t + h).d1 - l.jet(t - h).d1) / (2.0 * h);
                assert_relative_eq!(jet.d1, d1, max_relative = 1e-6, epsilon = 1e-12);
                assert_relative_eq!(jet.d2, d2, max_relative = 1e-6, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn slow_variation_ratio() {
        // L(lambda t)/L(t) -> 1, at the logarithmic rate these families have:
        // the gap at t is about beta log(lambda)/log(t), so check against
        // that envelope and confirm it shrinks by the right factor deeper in.
        for (l, beta) in [
            (SlowlyVaryingSpec::power_of_log(1.0), 1.0),
            (SlowlyVaryingSpec::power_of_log(-1.5), 1.5),
            (SlowlyVaryingSpec::iterated_log(2.0), 2.0),
        ] {
            for lambda in [0.5f64, 2.0, 10.0] {
                let gap = |t: f64| (l.eval(lambda * t) / l.eval(t) - 1.0).abs();
                let envelope = |t: f64| 1.1 * beta * lambda.ln().abs() / t.ln();
                assert!(
                    gap(1e9) < envelope(1e9),
                    "slow variation failed: lambda={lambda} gap={} envelope={}",
                    gap(1e9),
                    envelope(1e9)
                );
                assert!(gap(1e12) < gap(1e9), "gap must shrink: lambda={lambda}");
            }
        }
    }

    #[test]
    fn potter_constant_for_trivial_l() {
        let l = SlowlyVaryingSpec::constant(1.0);
        let grid = log_grid(1.0, 1e9, 100);
        let report = l.potter_report(0.5, &grid, 1e6).unwrap();
        assert_relative_eq!(report.c_theta, 1.0, max_relative = 1e-12);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn potter_log_beta_one_is_bounded() {
        let l = SlowlyVaryingSpec::power_of_log(1.0);
        let grid = log_grid(1.0, 1e9, 2000);
        let report = l.potter_report(0.5, &grid, 1e6).unwrap();
        assert!(report.c_theta.is_finite());
        assert!(report.violations.is_empty());
        // max of log(e+t)/sqrt(t) near t ~ 4.3 is about 1.3; reciprocal side
        // is largest at t = 1.
        assert!(report.c_theta < 2.0, "c_theta = {}", report.c_theta);
    }

    #[test]
    fn potter_small_theta_cap_exceeded() {
        // (log(e+t))^2 outgrows t^0.01 over [1, 1e3]; a small cap must flag it.
        let l = SlowlyVaryingSpec::power_of_log(2.0);
        let grid = log_grid(1.0, 1e3, 200);
        let report = l.potter_report(0.01, &grid, 10.0).unwrap();
        assert!(!report.violations.is_empty());
        assert!(report.c_theta > 10.0);
        assert!(report.max_violating_t.is_some());
    }

    #[test]
    fn potter_empty_grid_is_error() {
        let l = SlowlyVaryingSpec::constant(1.0);
        assert!(l.potter_report(0.5, &[], 10.0).is_err());
    }

    #[test]
    fn a_sequence_closed_forms() {
        let l = SlowlyVaryingSpec::constant(1.0);
        // a^(1/2) = 4 => a = 16; a^(1/4) = 3 => a = 81.
        assert_relative_eq!(l.a_sequence(0.5, 4).unwrap(), 16.0, max_relative = 1e-9);
        assert_relative_eq!(l.a_sequence(0.25, 3).unwrap(), 81.0, max_relative = 1e-9);
    }

    #[test]
    fn a_sequence_substitutes_back() {
        let l = SlowlyVaryingSpec::power_of_log(1.0);
        let a = l.a_sequence(0.5, 10).unwrap();
        let residual = (a.sqrt() / l.eval(a) - 10.0).abs() / 10.0;
        assert!(residual <= 1e-9, "residual {residual}");
    }

    #[test]
    fn a_sequence_strictly_increasing() {
        for l in [
            SlowlyVaryingSpec::constant(1.0),
            SlowlyVaryingSpec::power_of_log(1.0),
            SlowlyVaryingSpec::iterated_log(0.5),
        ] {
            let mut prev = 0.0;
            for k in 1..=1000 {
                let a = l.a_sequence(0.5, k).unwrap();
                assert!(a > prev, "a_sequence not increasing at k={k}: {a} <= {prev}");
                prev = a;
            }
        }
    }

    #[test]
    fn serde_round_trip() {
        let l = SlowlyVaryingSpec::PowerOfLog { beta: -1.0, t_min: Some(2.0) };
        let text = toml::to_string(&l).unwrap();
        let back: SlowlyVaryingSpec = toml::from_str(&text).unwrap();
        assert_eq!(l, back);
    }

    #[test]
    fn unknown_key_rejected() {
        let text = "variant = \"power_of_log\"\nbeta = 1.0\nbogus = 3\n";
        assert!(toml::from_str::<SlowlyVaryingSpec>(text).is_err());
    }
}

//! Orbital counting through the renewal representation.
//!
//! The orbital function `N(R) = #{gamma : d(o, gamma o) <= R}` decomposes
//! against the exponentially weighted bin functions
//! `e_n(t) = e^{delta t} 1{-(n+1) < t <= -n}` as
//! `N(R) = e^{delta R} sum_n M(R, 1 (x) e_n)(x_0)` where
//!
//! `M(R, phi (x) u)(x) = sum_gamma e^{-delta b~(gamma, x)} phi(gamma x) u(-R + b~(gamma, x))`.
//!
//! Splitting by word length and Doob-normalizing turns `M` into a renewal
//! sum `h(x) sum_k rho^k P~^k(phi/h (x) u)(x, -R)` driven by the Markov
//! operator of the transfer module. For convergent instances (`rho < 1` at
//! `s = delta`) each level contributes `~ L(R)/R^alpha` and the series is
//! summable, which is what produces the polynomially deflated asymptotic
//! `N(R) ~ C L(R) R^{-alpha} e^{delta R}`.
//!
//! Level sums here are window-exact: `u` has compact support, so only words
//! whose cocycle lands in `[R + a, R + b]` contribute, and those are
//! enumerated completely (no spatial mesh, no letter cap) by inverting the
//! parabolic distance cache over the window and scanning hyperbolic letters
//! until they exit it. On the orbit of `x_0` the cocycle telescopes through
//! exactly the same arithmetic as the ball enumerator, so window sums and
//! ball sums agree to rounding, not to a model tolerance.

use crate::coding::{
    enumerate_ball, letter_cocycle_orbit, parabolic_translation, word_distance, BallParams,
    BallReport, DistanceModel, Letter, Word,
};
use crate::error::{Error, Result};
use crate::hyperbolic::{busemann, gromov, BoundaryPoint, FactorKind, Isometry, SchottkyData};
use crate::svf::SlowlyVaryingSpec;
use crate::transfer::{factor_tail_mass, SpectralData, TransferOperator};
use rayon::prelude::*;

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

/// Compactly supported piecewise-linear function on the line.
#[derive(Debug, Clone)]
pub struct TestFunction {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl TestFunction {
    /// Build from breakpoints with strictly increasing abscissae; the first
    /// and last values must vanish so the PL extension by zero is continuous.
    pub fn from_breakpoints(points: Vec<(f64, f64)>) -> Result<TestFunction> {
        if points.len() < 2 {
            return Err(Error::Validation("test function needs at least 2 breakpoints".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Validation(
                    "test function breakpoints must be strictly increasing".into(),
                ));
            }
        }
        if !points.iter().all(|(x, y)| x.is_finite() && y.is_finite()) {
            return Err(Error::Validation("test function breakpoints must be finite".into()));
        }
        if points[0].1 != 0.0 || points[points.len() - 1].1 != 0.0 {
            return Err(Error::Validation(
                "test function must vanish at the ends of its support".into(),
            ));
        }
        let (xs, ys) = points.into_iter().unzip();
        Ok(TestFunction { xs, ys })
    }

    /// Indicator of `[a, b]` with linear ramps of the given width just inside
    /// the endpoints, so the support is exactly `[a, b]`.
    pub fn mollified_indicator(a: f64, b: f64, width: f64) -> Result<TestFunction> {
        if !(width > 0.0 && 2.0 * width < b - a) {
            return Err(Error::Validation(format!(
                "mollification width {width} does not fit in [{a}, {b}]"
            )));
        }
        TestFunction::from_breakpoints(vec![
            (a, 0.0),
            (a + width, 1.0),
            (b - width, 1.0),
            (b, 0.0),
        ])
    }

    /// Piecewise-linear approximant of the counting bin
    /// `e_n(t) = e^{delta t} 1{-(n+1) < t <= -n}`, mollified inward so the
    /// support stays inside the bin, with `segments` chords on the plateau.
    pub fn mollified_en(n: u32, delta: f64, width: f64, segments: usize) -> Result<TestFunction> {
        let lo = -(n as f64 + 1.0);
        let hi = -(n as f64);
        if !(width > 0.0 && 2.0 * width < 1.0) {
            return Err(Error::Validation(format!("bin mollification width {width} invalid")));
        }
        let segs = segments.max(1);
        let mut pts = vec![(lo, 0.0)];
        let a = lo + width;
        let b = hi - width;
        for i in 0..=segs {
            let t = a + (b - a) * i as f64 / segs as f64;
            pts.push((t, (delta * t).exp()));
        }
        pts.push((hi, 0.0));
        TestFunction::from_breakpoints(pts)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().expect("nonempty"))
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t < self.xs[0] || t > *self.xs.last().expect("nonempty") {
            return 0.0;
        }
        let i = self.xs.partition_point(|&x| x <= t);
        let left = i.saturating_sub(1).min(self.xs.len() - 2);
        let frac = (t - self.xs[left]) / (self.xs[left + 1] - self.xs[left]);
        (1.0 - frac) * self.ys[left] + frac * self.ys[left + 1]
    }

    /// Exact integral of the PL function (trapezoid on its own breakpoints).
    pub fn integral(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.ys.windows(2))
            .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
            .sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.ys.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
    }

    /// The translate `t -> u(t - c)`.
    pub fn shifted(&self, c: f64) -> TestFunction {
        TestFunction {
            xs: self.xs.iter().map(|x| x + c).collect(),
            ys: self.ys.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Orbital anchor
// ---------------------------------------------------------------------------

/// Counting-side view of a convergent spectral solve, anchored at the orbit
/// of `x_0`.
///
/// On the orbit the cocycle is `b~(gamma, g x_0) = d(o, gamma g o) - d(o, g o)`
/// (so `b~(gamma, x_0) = d(o, gamma o)` exactly), which differs from the
/// boundary extension used on the mesh arcs. The eigenfunction restricted to
/// the arcs is shared; only the value at the anchor changes, and `h0` here is
/// the orbital one, fixed by stochasticity of the one-step Doob weights at
/// `x_0`.
pub struct OrbitalContext<'a> {
    pub op: &'a TransferOperator,
    pub sd: &'a SpectralData,
    /// Orbital eigenfunction value at `x_0`.
    pub h0: f64,
    /// Per-factor lower bounds on one-letter cocycles from admissible
    /// positions (used to prune window searches; slack only costs time).
    pub floors: Vec<f64>,
    /// Mass the one-step window normalization cannot see beyond the letter
    /// horizon used for `h0` (parabolic tail plus its uncertainty).
    pub h0_tail: f64,
}

/// Collect every admissible letter of factor `j` at the orbit point
/// `suffix * x_0` whose cocycle stays `<= top`, in deterministic order
/// (ascending `|n|`, `+` before `-`).
fn window_letters(
    data: &SchottkyData,
    model: &DistanceModel,
    j: usize,
    suffix: &Isometry,
    y: BoundaryPoint,
    top: f64,
    out: &mut Vec<(Letter, f64)>,
) -> Result<()> {
    let f = data.factor(j);
    let cusp_priced = model.is_modified() && f.kind == FactorKind::Parabolic;
    if cusp_priced {
        let cache = match model {
            DistanceModel::ModifiedCusp { cache } => cache,
            DistanceModel::ExactH2 => unreachable!(),
        };
        let tau = parabolic_translation(data, j)?;
        let xp = f.fixed_points[0];
        let d_cut = top + 2.0 * gromov(xp, y, data.base)?;
        let (d_lo, d_hi) = cache.d_range();
        if d_cut < d_lo {
            return Ok(());
        }
        if d_cut > d_hi {
            return Err(Error::Validation(format!(
                "window sum needs parabolic letters with priced distance up to {d_cut:.3}, \
                 beyond the cache ceiling {d_hi:.3}; rebuild the cache with a larger range"
            )));
        }
        let u_cut = cache.displacement_for_distance(d_cut)?;
        let n_hi = (u_cut / tau + 1e-9).floor() as i64;
        for n in 1..=n_hi {
            for sign in [n, -n] {
                let letter = Letter::new(j, sign)?;
                let b = letter_cocycle_orbit(data, model, letter, suffix)?;
                if b <= top {
                    out.push((letter, b));
                }
            }
        }
    } else {
        // Hyperbolic (or unperturbed parabolic) letters: the orbital cocycle
        // grows without bound in |n|, and is monotone past the first few
        // exponents; scan until both signs have exited the window three
        // times in a row.
        let mut misses = 0usize;
        let mut n = 1i64;
        loop {
            let mut any = false;
            for sign in [n, -n] {
                let letter = Letter::new(j, sign)?;
                let b = letter_cocycle_orbit(data, model, letter, suffix)?;
                if b <= top {
                    out.push((letter, b));
                    any = true;
                }
            }
            misses = if any { 0 } else { misses + 1 };
            if misses >= 3 {
                return Ok(());
            }
            n += 1;
            if n > 100_000_000 {
                return Err(Error::Budget(format!(
                    "letter window of factor {j} did not close below exponent {n}"
                )));
            }
        }
    }
    Ok(())
}

impl<'a> OrbitalContext<'a> {
    /// Build the orbital view of a spectral solve. `op.s` is the exponent
    /// the counting runs at (normally `delta`).
    pub fn new(op: &'a TransferOperator, sd: &'a SpectralData) -> Result<OrbitalContext<'a>> {
        let data = &op.data;
        let model = &op.model;
        // Orbital h(x_0): one-step average of the mesh eigenfunction under
        // orbital letter weights, with the parabolic letter tail priced
        // through the fixed point (no Gromov boost on the orbit of x_0).
        let mut acc = 0.0;
        let mut tail = 0.0;
        for (j, f) in data.factors.iter().enumerate() {
            let cap = match f.kind {
                FactorKind::Parabolic => op.params.trunc_parabolic,
                FactorKind::Hyperbolic => op.params.trunc_hyperbolic,
            };
            for n in 1..=cap {
                for sign in [n, -n] {
                    let letter = Letter::new(j, sign)?;
                    let b = letter_cocycle_orbit(data, model, letter, &Isometry::identity())?;
                    let img = letter.generator(data).apply_boundary(data.x0);
                    acc += (-op.s * b).exp() * op.mesh.eval(&sd.h, img)?;
                }
            }
            if f.kind == FactorKind::Parabolic {
                let tb = factor_tail_mass(data, model, j, op.s, cap)?;
                let h_xp = op.mesh.eval(&sd.h, f.fixed_points[0])?;
                let xp_gromov = (2.0 * op.s * gromov(f.fixed_points[0], data.x0, data.base)?).exp();
                acc += 2.0 * tb.total * xp_gromov * h_xp;
                tail += 2.0 * tb.uncertainty * xp_gromov * h_xp;
            }
        }
        let h0 = acc / sd.rho;
        if !(h0 > 0.0) {
            return Err(Error::Numeric("orbital eigenfunction value is not positive".into()));
        }

        // Letter floors: minimum one-letter cocycle from any admissible
        // position (mesh samples of the other factors' arcs plus the
        // anchor), shaved by 10% for safety. Used only to prune.
        let mut floors = Vec::with_capacity(data.factors.len());
        for j in 0..data.factors.len() {
            let mut min_b = f64::INFINITY;
            for (i, &p) in op.mesh.points.iter().enumerate() {
                if op.mesh.owner[i] == Some(j) {
                    continue;
                }
                for n in 1..=2i64 {
                    for sign in [n, -n] {
                        let letter = Letter::new(j, sign)?;
                        let b = crate::coding::letter_cocycle_boundary(data, model, letter, p)?;
                        min_b = min_b.min(b);
                    }
                }
            }
            for n in 1..=2i64 {
                for sign in [n, -n] {
                    let letter = Letter::new(j, sign)?;
                    let b = letter_cocycle_orbit(data, model, letter, &Isometry::identity())?;
                    min_b = min_b.min(b);
                }
            }
            floors.push((0.9 * min_b).max(0.0));
        }
        Ok(OrbitalContext { op, sd, h0, floors, h0_tail: tail / sd.rho })
    }

    /// Minimal possible cocycle of `r` further letters, the first of which
    /// cannot belong to `last`.
    fn remaining_floor(&self, last: usize, r: usize) -> f64 {
        if r == 0 {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..self.floors.len() {
            if j == last {
                continue;
            }
            best = best.min(self.floors[j] + self.remaining_floor(j, r - 1));
        }
        best
    }

    /// `M_k`-style window sum: `sum_{gamma in Gamma(k)} e^{-s b~(gamma, x_0)}
    /// g(gamma x_0, b~) u(t + b~)` with `g` either plain `phi` or
    /// `h-weighted` (`phi * h` for the Markov-normalized levels). Exact over
    /// the support window.
    fn window_level_sum(
        &self,
        phi: &(dyn Fn(BoundaryPoint) -> Result<f64> + Sync),
        u: &TestFunction,
        t: f64,
        k: usize,
        h_weighted: bool,
    ) -> Result<f64> {
        let data = &self.op.data;
        let model = &self.op.model;
        if k == 0 {
            let uval = u.eval(t);
            if uval == 0.0 {
                return Ok(0.0);
            }
            let g = if h_weighted { self.h0 } else { 1.0 };
            return Ok(phi(data.x0)? * g * uval);
        }
        let (_, b_supp) = u.support();
        let hi_total = b_supp - t;
        if !hi_total.is_finite() || hi_total <= 0.0 {
            return Ok(0.0);
        }

        let mut roots: Vec<(Letter, f64)> = Vec::new();
        for j in 0..data.factors.len() {
            let top = hi_total - self.remaining_floor(j, k - 1);
            if top <= 0.0 {
                continue;
            }
            window_letters(data, model, j, &Isometry::identity(), data.x0, top, &mut roots)?;
        }

        let partials: Vec<Result<f64>> = roots
            .par_iter()
            .map(|&(letter, b)| {
                let suffix = letter.generator(data);
                let y = suffix.apply_boundary(data.x0);
                let mut acc = 0.0;
                self.descend(phi, u, t, k, h_weighted, 1, letter.factor, &suffix, y, b, &mut acc)?;
                Ok(acc)
            })
            .collect();
        let mut total = 0.0;
        for p in partials {
            total += p?;
        }
        Ok(total)
    }

    #[allow(clippy::too_many_arguments)]
    fn descend(
        &self,
        phi: &(dyn Fn(BoundaryPoint) -> Result<f64> + Sync),
        u: &TestFunction,
        t: f64,
        k: usize,
        h_weighted: bool,
        depth: usize,
        last: usize,
        suffix: &Isometry,
        y: BoundaryPoint,
        b_acc: f64,
        acc: &mut f64,
    ) -> Result<()> {
        let data = &self.op.data;
        let model = &self.op.model;
        if depth == k {
            let uval = u.eval(t + b_acc);
            if uval != 0.0 {
                let g = if h_weighted { self.op.mesh.eval(&self.sd.h, y)? } else { 1.0 };
                *acc += (-self.op.s * b_acc).exp() * g * phi(y)? * uval;
            }
            return Ok(());
        }
        let (_, b_supp) = u.support();
        let hi_total = b_supp - t;
        let mut letters: Vec<(Letter, f64)> = Vec::new();
        for j in 0..data.factors.len() {
            if j == last {
                continue;
            }
            let top = hi_total - b_acc - self.remaining_floor(j, k - depth - 1);
            if top <= 0.0 {
                continue;
            }
            window_letters(data, model, j, suffix, y, top, &mut letters)?;
        }
        for (letter, b) in letters {
            let next = letter.generator(data).compose(suffix);
            let y_next = letter.generator(data).apply_boundary(y);
            self.descend(
                phi,
                u,
                t,
                k,
                h_weighted,
                depth + 1,
                letter.factor,
                &next,
                y_next,
                b_acc + b,
                acc,
            )?;
        }
        Ok(())
    }

    /// One application of the product-space Markov operator on `phi (x) u`
    /// at `(x_0, t)`: `sum_{letters} p(a, x_0) phi(a x_0) u(t + b~(a, x_0))`.
    pub fn p_tilde_apply(
        &self,
        phi: &(dyn Fn(BoundaryPoint) -> Result<f64> + Sync),
        u: &TestFunction,
        t: f64,
    ) -> Result<f64> {
        self.p_tilde_level(phi, u, t, 1)
    }

    /// `P~^k(phi (x) u)(x_0, t)`, window-exact over `Gamma(k)`.
    pub fn p_tilde_level(
        &self,
        phi: &(dyn Fn(BoundaryPoint) -> Result<f64> + Sync),
        u: &TestFunction,
        t: f64,
        k: usize,
    ) -> Result<f64> {
        let raw = self.window_level_sum(phi, u, t, k, true)?;
        Ok(raw / (self.sd.rho.powi(k as i32) * self.h0))
    }

    /// `M_k(R, phi (x) u)(x_0)`: the plain level sum (no Doob weighting, so
    /// no interpolated eigenfunction enters the value).
    pub fn m_level(
        &self,
        phi: &(dyn Fn(BoundaryPoint) -> Result<f64> + Sync),
        u: &TestFunction,
        r: f64,
        k: usize,
    ) -> Result<f64> {
        self.window_level_sum(phi, u, -r, k, false)
    }
}

// ---------------------------------------------------------------------------
// Renewal representation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RenewalReport {
    pub value: f64,
    /// Bound on the dropped levels `k > k_max`.
    pub tail_bound: f64,
    /// Markov-normalized level values `P~^k(phi/h (x) u)(x_0, -R)`.
    pub per_k: Vec<f64>,
    /// Calibrated envelope constant: the largest observed
    /// `per_k * R^alpha / (k^2 L(R) ||phi/h||)`.
    pub c_u: f64,
    pub k_max: usize,
    pub rho: f64,
}

/// Evaluate `M(R, phi (x) u)(x_0)` through the renewal sum
/// `h0 sum_k rho^k P~^k(phi/h (x) u)` truncated at `k_max`, with the dropped
/// levels bounded by the `C_u k^2 L(R)/R^alpha` envelope calibrated on the
/// computed levels.
pub fn renewal_m(
    ctx: &OrbitalContext,
    phi: &(dyn Fn(BoundaryPoint) -> Result<f64> + Sync),
    u: &TestFunction,
    r: f64,
    k_max: usize,
    alpha: f64,
    l: &SlowlyVaryingSpec,
) -> Result<RenewalReport> {
    if !(ctx.sd.rho < 1.0) {
        return Err(Error::Validation(format!(
            "the renewal representation needs a convergent instance (rho = {} at s = {})",
            ctx.sd.rho, ctx.op.s
        )));
    }
    if r <= 1.0 {
        return Err(Error::Validation("renewal evaluation needs R > 1".into()));
    }
    let rho = ctx.sd.rho;
    let l_r = l.eval(r);
    let mut value = 0.0;
    let mut per_k = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let m_k = ctx.m_level(phi, u, r, k)?;
        value += m_k;
        per_k.push(m_k / (rho.powi(k as i32) * ctx.h0));
    }
    // ||phi/h|| over the mesh and the anchor.
    let mut norm = (phi(ctx.op.data.x0)? / ctx.h0).abs();
    for (i, &p) in ctx.op.mesh.points.iter().enumerate() {
        if i == ctx.op.mesh.x0_index() {
            continue;
        }
        norm = norm.max((phi(p)? / ctx.sd.h[i]).abs());
    }
    let mut c_u = 0.0f64;
    for (k, &v) in per_k.iter().enumerate().skip(1) {
        c_u = c_u.max(v.abs() * r.powf(alpha) / (k as f64 * k as f64 * l_r * norm));
    }
    let mut tail = 0.0;
    let mut term;
    let mut k = k_max + 1;
    loop {
        term = rho.powi(k as i32) * (k as f64 * k as f64);
        tail += term;
        k += 1;
        if term < 1e-16 * tail.max(1e-300) || k > 100_000 {
            break;
        }
    }
    let tail_bound = ctx.h0 * c_u * norm * l_r / r.powf(alpha) * tail;
    Ok(RenewalReport { value, tail_bound, per_k, c_u, k_max, rho })
}

// ---------------------------------------------------------------------------
// Level-one constants
// ---------------------------------------------------------------------------

/// How the evaluation point of a level constant is specified: a plain
/// boundary point (treated as a limit point outside the orbit), or an orbit
/// point `g x_0` given by its word.
pub enum PointSpec {
    Limit(BoundaryPoint),
    Orbit(Word),
}

/// Window-sum plateau of a parabolic factor: scaled sums
/// `(r^alpha / (L(r) width)) sum_{n: r < d(n tau) <= r + width} e^{-delta d(n tau)}`
/// (doubled when `two_sided`), sampled on an `r` grid; the fitted `c_j` is
/// the value at the largest grid point and the spread over the grid is the
/// honest wobble of the finite-`r` plateau.
#[derive(Debug, Clone)]
pub struct PlateauReport {
    pub c_j: f64,
    pub spread: f64,
    pub r_values: Vec<f64>,
    pub scaled: Vec<f64>,
    pub width: f64,
    pub two_sided: bool,
}

/// One scaled window sum of a parabolic factor's letter series.
pub fn factor_window_sum(
    data: &SchottkyData,
    model: &DistanceModel,
    factor: usize,
    delta: f64,
    r: f64,
    width: f64,
    two_sided: bool,
) -> Result<f64> {
    if data.factor(factor).kind != FactorKind::Parabolic {
        return Err(Error::Validation(format!("factor {factor} is not parabolic")));
    }
    if !(width > 0.0) {
        return Err(Error::Validation("window width must be positive".into()));
    }
    let tau = parabolic_translation(data, factor)?;
    let sum = match model {
        DistanceModel::ModifiedCusp { cache } => {
            let (d_lo, d_hi) = cache.d_range();
            if r + width > d_hi {
                return Err(Error::Validation(format!(
                    "window [{r}, {}] exceeds the cache distance ceiling {d_hi:.3}",
                    r + width
                )));
            }
            let n_lo = if r < d_lo {
                1
            } else {
                (cache.displacement_for_distance(r)? / tau).floor() as i64 + 1
            };
            let n_hi = (cache.displacement_for_distance(r + width)? / tau + 1e-9).floor() as i64;
            let mut s = 0.0;
            for n in n_lo..=n_hi {
                let d = cache.d_full(n as f64 * tau)?;
                if d > r && d <= r + width {
                    s += (-delta * d).exp();
                }
            }
            s
        }
        DistanceModel::ExactH2 => {
            // d(n tau) = 2 asinh(n tau / 2); invert in closed form.
            let n_lo = (2.0 * (0.5 * r).sinh() / tau).floor() as i64 + 1;
            let n_hi = (2.0 * (0.5 * (r + width)).sinh() / tau + 1e-9).floor() as i64;
            let mut s = 0.0;
            for n in n_lo.max(1)..=n_hi {
                let d = 2.0 * (0.5 * n as f64 * tau).asinh();
                if d > r && d <= r + width {
                    s += (-delta * d).exp();
                }
            }
            s
        }
    };
    Ok(sum * if two_sided { 2.0 } else { 1.0 })
}

/// Fit the window-sum plateau over an `r` grid.
#[allow(clippy::too_many_arguments)]
pub fn factor_tail_plateau(
    data: &SchottkyData,
    model: &DistanceModel,
    factor: usize,
    delta: f64,
    alpha: f64,
    l: &SlowlyVaryingSpec,
    width: f64,
    r_values: &[f64],
    two_sided: bool,
) -> Result<PlateauReport> {
    if r_values.is_empty() {
        return Err(Error::Validation("plateau fit needs at least one r value".into()));
    }
    let mut scaled = Vec::with_capacity(r_values.len());
    for &r in r_values {
        let raw = factor_window_sum(data, model, factor, delta, r, width, two_sided)?;
        scaled.push(raw * r.powf(alpha) / (l.eval(r) * width));
    }
    let c_j = *scaled.last().expect("nonempty");
    let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scaled.iter().cloned().fold(0.0f64, f64::max);
    Ok(PlateauReport {
        c_j,
        spread: hi - lo,
        r_values: r_values.to_vec(),
        scaled,
        width,
        two_sided,
    })
}

/// The level-one constant `C_j(x) = c_j h(x_j) / (rho h(x))` times the
/// position factor: `e^{2 delta (x_j|x)_o}` at non-orbit points,
/// `e^{delta (B_{x_j}(o, g o) + d(o, g o))}` at orbit points `g x_0`, and 0
/// inside the factor's own arcs. Hyperbolic factors contribute no level-one
/// constant (their window sums decay exponentially), so `j` must be
/// parabolic unless the result is the trivial 0.
pub fn level_constant_cj(
    ctx: &OrbitalContext,
    j: usize,
    point: &PointSpec,
    c_j: f64,
) -> Result<f64> {
    let op = ctx.op;
    let data = &op.data;
    let f = data.factor(j);
    if f.kind != FactorKind::Parabolic {
        return Ok(0.0);
    }
    let delta = op.s;
    let x = match point {
        PointSpec::Limit(p) => *p,
        PointSpec::Orbit(w) => w.isometry(data).apply_boundary(data.x0),
    };
    // Membership in the factor's arcs, with an ambiguity guard at the edges.
    let mut inside = false;
    for arc in &f.arcs {
        if let BoundaryPoint::Finite(v) = x {
            if (v - arc.lo).abs() < 1e-9 || (v - arc.hi).abs() < 1e-9 {
                return Err(Error::Validation(format!(
                    "point {x} sits on an interval boundary of factor {j}; \
                     classification is ambiguous"
                )));
            }
        }
        if arc.contains(x) {
            inside = true;
        }
    }
    if inside {
        return Ok(0.0);
    }
    let xj = f.fixed_points[0];
    let h_xj = op.mesh.eval(&ctx.sd.h, xj)?;
    let (factor_val, h_x) = match point {
        PointSpec::Limit(p) => {
            ((2.0 * delta * gromov(xj, *p, data.base)?).exp(), op.mesh.eval(&ctx.sd.h, *p)?)
        }
        PointSpec::Orbit(w) => {
            let g = w.isometry(data);
            let go = g.apply(data.base);
            let b = busemann(xj, data.base, go);
            let d = word_distance(data, &op.model, w)?;
            let h_x = if w.is_empty() { ctx.h0 } else { op.mesh.eval(&ctx.sd.h, x)? };
            ((delta * (b + d)).exp(), h_x)
        }
    };
    Ok(c_j * h_xj / (ctx.sd.rho * h_x) * factor_val)
}

/// Prop-style level-`k` prediction at the anchor with `phi = 1`:
/// `sum_j sum_{l=0}^{k-1} (P^l C_j)(x_0)` (the `P^{k-1-l} 1(x_j)` factors
/// are exactly 1). `C_j` is realized as a mesh function through its limit
/// branch, with the orbit branch at the anchor slot.
pub fn level_limit_prediction(
    ctx: &OrbitalContext,
    c_js: &[f64],
    k: usize,
) -> Result<f64> {
    let op = ctx.op;
    let n = op.mesh.len();
    if c_js.len() != op.data.factors.len() {
        return Err(Error::Validation("need one fitted c_j per factor".into()));
    }
    let mut total = 0.0;
    for (j, &cj) in c_js.iter().enumerate() {
        if op.data.factor(j).kind != FactorKind::Parabolic {
            continue;
        }
        let mut vec = vec![0.0f64; n];
        for i in 0..n - 1 {
            vec[i] = level_constant_cj(ctx, j, &PointSpec::Limit(op.mesh.points[i]), cj)?;
        }
        vec[n - 1] = level_constant_cj(ctx, j, &PointSpec::Orbit(Word::identity()), cj)?;
        let mut cur = vec;
        for _ in 0..k {
            total += cur[n - 1];
            cur = op.doob_apply(ctx.sd, &cur)?;
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Brute counting and fits
// ---------------------------------------------------------------------------

/// Exact orbital counts over an `R` grid with the normalized ratios of the
/// convergent and divergent asymptotic shapes.
#[derive(Debug, Clone)]
pub struct CountReport {
    pub r_grid: Vec<f64>,
    pub counts: Vec<u64>,
    /// `N(R) R^alpha / (L(R) e^{delta R})`.
    pub c_hat: Vec<f64>,
    /// `N(R) R^{2-alpha} L(R) e^{-delta R}` (divergent-shape diagnostic;
    /// reported, never asserted).
    pub c_div_hat: Vec<f64>,
    pub delta: f64,
    pub alpha: f64,
    /// Prune rule was depth-complete for every grid point.
    pub complete: bool,
    /// Grid truncated by the node budget.
    pub budget_exhausted: bool,
    pub nodes_visited: u64,
}

impl CountReport {
    /// Assemble a report from raw counts (also the synthetic-input path).
    pub fn from_counts(
        r_grid: Vec<f64>,
        counts: Vec<u64>,
        delta: f64,
        alpha: f64,
        l: &SlowlyVaryingSpec,
    ) -> Result<CountReport> {
        if r_grid.len() != counts.len() || r_grid.is_empty() {
            return Err(Error::Validation("count report needs matching nonempty grids".into()));
        }
        let mut c_hat = Vec::with_capacity(r_grid.len());
        let mut c_div_hat = Vec::with_capacity(r_grid.len());
        for (&r, &n) in r_grid.iter().zip(&counts) {
            let l_r = l.eval(r);
            c_hat.push(n as f64 * r.powf(alpha) / (l_r * (delta * r).exp()));
            c_div_hat.push(n as f64 * r.powf(2.0 - alpha) * l_r * (-delta * r).exp());
        }
        Ok(CountReport {
            r_grid,
            counts,
            c_hat,
            c_div_hat,
            delta,
            alpha,
            complete: true,
            budget_exhausted: false,
            nodes_visited: 0,
        })
    }
}

/// Count `#{gamma : d(o, gamma o) <= R}` exactly at each grid radius.
///
/// Radii are processed in increasing order; if the node budget dies at some
/// radius the report carries the completed prefix and is flagged.
#[allow(clippy::too_many_arguments)]
pub fn brute_count(
    data: &SchottkyData,
    model: &DistanceModel,
    delta: f64,
    alpha: f64,
    l: &SlowlyVaryingSpec,
    r_grid: &[f64],
    ball: &BallParams,
) -> Result<CountReport> {
    let mut sorted = r_grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite radii"));
    if sorted.is_empty() {
        return Err(Error::Validation("count grid is empty".into()));
    }
    // One enumeration at the largest radius serves every grid point.
    let params = BallParams { radius: *sorted.last().expect("nonempty"), ..ball.clone() };
    let (report, truncated) = match enumerate_ball(data, model, &params) {
        Ok(rep) => (rep, false),
        Err(Error::Budget(_)) => {
            // Retry on a shrinking prefix of the grid.
            let mut found: Option<BallReport> = None;
            let mut last_ok = 0usize;
            for (i, &r) in sorted.iter().enumerate().rev() {
                let p = BallParams { radius: r, ..ball.clone() };
                if let Ok(rep) = enumerate_ball(data, model, &p) {
                    found = Some(rep);
                    last_ok = i;
                    break;
                }
            }
            match found {
                Some(rep) => {
                    sorted.truncate(last_ok + 1);
                    (rep, true)
                }
                None => {
                    return Err(Error::Budget(
                        "ball enumeration exceeds the node budget at every grid radius".into(),
                    ))
                }
            }
        }
        Err(e) => return Err(e),
    };
    let counts: Vec<u64> = sorted.iter().map(|&r| report.count_within(r) as u64).collect();
    let mut out = CountReport::from_counts(sorted, counts, delta, alpha, l)?;
    out.complete = report.complete;
    out.budget_exhausted = truncated;
    out.nodes_visited = report.nodes_visited;
    Ok(out)
}

/// Fitted constants of the asymptotic shape.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Median of `c_hat` over the top third of the grid.
    pub c_hat: f64,
    /// Relative slope of `c_hat` there (least squares slope over mean).
    pub drift: f64,
    /// Same for the divergent diagnostic (reported, never asserted).
    pub c_div_drift: f64,
    /// max/min - 1 of `c_hat` over the window.
    pub variation: f64,
    pub window: (f64, f64),
    pub points: usize,
}

fn relative_slope(r: &[f64], v: &[f64]) -> f64 {
    let n = r.len() as f64;
    let mr = r.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&x, &y) in r.iter().zip(v) {
        num += (x - mr) * (y - mv);
        den += (x - mr) * (x - mr);
    }
    (num / den) / mv
}

/// Fit the convergent shape over the top third of the grid.
pub fn asymptotic_fit(report: &CountReport) -> Result<FitReport> {
    let n = report.r_grid.len();
    let start = n - (n / 3).max(3).min(n);
    let m = n - start;
    if m < 3 {
        return Err(Error::Validation(format!(
            "asymptotic fit needs at least 3 grid points in the top third, found {m}"
        )));
    }
    let r = &report.r_grid[start..];
    let c = &report.c_hat[start..];
    let cd = &report.c_div_hat[start..];
    let mut sorted_c = c.to_vec();
    sorted_c.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
    let c_hat = sorted_c[m / 2];
    let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = c.iter().cloned().fold(0.0f64, f64::max);
    Ok(FitReport {
        c_hat,
        drift: relative_slope(r, c),
        c_div_drift: relative_slope(r, cd),
        variation: hi / lo - 1.0,
        window: (r[0], r[m - 1]),
        points: m,
    })
}

/// Fixed-schema CSV of a count report. The drift column carries the
/// relative slope of `c_hat` over the rows up to and including the current
/// one (0 until three rows are available).
pub fn count_csv(report: &CountReport) -> String {
    let mut s = String::from("R,N,C_hat,C_div_hat,drift\n");
    for i in 0..report.r_grid.len() {
        let drift = if i >= 2 {
            relative_slope(&report.r_grid[..=i], &report.c_hat[..=i])
        } else {
            0.0
        };
        s.push_str(&format!(
            "{:.6},{},{:.12e},{:.12e},{:.12e}\n",
            report.r_grid[i], report.counts[i], report.c_hat[i], report.c_div_hat[i], drift
        ));
    }
    s
}

/// Both sides of the exact bin decomposition
/// `N(R) = e^{delta R} sum_n M(R, 1 (x) e_n)(x_0)` evaluated over an
/// enumerated ball (exact `e_n`, not the mollified approximants): returns
/// `(recombined, direct_count)`.
pub fn decomposition_check(
    report: &BallReport,
    delta: f64,
    r: f64,
) -> Result<(f64, u64)> {
    let mut recombined = 0.0;
    let mut count = 0u64;
    for (_, d) in &report.words {
        if *d > r {
            continue;
        }
        count += 1;
        let t = -r + d;
        // Bin index with -(n+1) < t <= -n.
        let n = (-t).floor();
        debug_assert!(-(n + 1.0) < t && t <= -n);
        recombined += (-delta * d).exp() * (delta * t).exp();
    }
    Ok(((delta * r).exp() * recombined, count))
}

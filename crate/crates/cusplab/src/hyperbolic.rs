//! Exact upper half-plane geometry: Möbius isometries, distances, Busemann
//! cocycles, Gromov products, and validated Schottky data.
//!
//! Everything here is closed-form hyperbolic geometry; the cusp perturbation
//! enters only through the distance model in the coding layer. The boundary
//! circle is the real line plus a tagged point at infinity, never a large
//! float.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::CuspProfile;

/// Point of the open upper half-plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HPoint {
    pub x: f64,
    pub y: f64,
}

impl HPoint {
    pub fn new(x: f64, y: f64) -> Result<HPoint> {
        if !(y > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(Error::Validation(format!(
                "half-plane point needs finite x and y > 0, got ({x}, {y})"
            )));
        }
        Ok(HPoint { x, y })
    }

    /// The default base point i.
    pub fn base() -> HPoint {
        HPoint { x: 0.0, y: 1.0 }
    }
}

/// Boundary point: a real number or the point at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundaryPoint {
    Finite(f64),
    Infinity,
}

impl BoundaryPoint {
    pub fn is_infinity(&self) -> bool {
        matches!(self, BoundaryPoint::Infinity)
    }

    pub fn approx_eq(&self, other: &BoundaryPoint, tol: f64) -> bool {
        match (self, other) {
            (BoundaryPoint::Infinity, BoundaryPoint::Infinity) => true,
            (BoundaryPoint::Finite(a), BoundaryPoint::Finite(b)) => (a - b).abs() <= tol,
            _ => false,
        }
    }
}

impl std::fmt::Display for BoundaryPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryPoint::Finite(x) => write!(f, "{x}"),
            BoundaryPoint::Infinity => write!(f, "inf"),
        }
    }
}

/// Orientation-preserving isometry z -> (az+b)/(cz+d), normalized to det 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Isometry {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Trace-based classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsometryClass {
    Identity,
    Parabolic,
    Hyperbolic,
    Elliptic,
}

impl Isometry {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Isometry> {
        let det = a * d - b * c;
        if !det.is_finite() || det <= 0.0 {
            return Err(Error::Validation(format!(
                "isometry needs positive determinant, got {det}"
            )));
        }
        let mut m = Isometry { a, b, c, d };
        m.renormalize();
        Ok(m)
    }

    pub fn identity() -> Isometry {
        Isometry { a: 1.0, b: 0.0, c: 0.0, d: 1.0 }
    }

    /// Parabolic translation z -> z + tau.
    pub fn translation(tau: f64) -> Isometry {
        Isometry { a: 1.0, b: tau, c: 0.0, d: 1.0 }
    }

    /// Hyperbolic isometry with repelling fixed point `u`, attracting fixed
    /// point `v`, and translation length `2 log lambda`.
    pub fn hyperbolic_through(u: f64, v: f64, lambda: f64) -> Result<Isometry> {
        if !(lambda > 1.0) || u == v {
            return Err(Error::Validation(format!(
                "hyperbolic axis needs distinct fixed points and lambda > 1, got ({u}, {v}, {lambda})"
            )));
        }
        let s = v - u;
        let li = 1.0 / lambda;
        Isometry::new(
            (lambda * v - li * u) / s,
            u * v * (li - lambda) / s,
            (lambda - li) / s,
            (v * li - u * lambda) / s,
        )
    }

    /// Rescale to det 1 and canonicalize the sign. Only used at construction,
    /// where entries are of moderate size; for composed products the computed
    /// determinant `ad - bc` cancels catastrophically once entries exceed
    /// ~1e8, so products must never be rescaled by it. Determinant-one is
    /// preserved exactly (up to entrywise relative rounding) by composition.
    fn renormalize(&mut self) {
        let det = self.a * self.d - self.b * self.c;
        let r = det.sqrt();
        self.a /= r;
        self.b /= r;
        self.c /= r;
        self.d /= r;
        self.canonicalize_sign();
    }

    /// Fix the projective sign so the representative is canonical (trace
    /// nonnegative, tie-broken by the first nonzero entry). Exact: negation
    /// introduces no rounding.
    fn canonicalize_sign(&mut self) {
        let tr = self.a + self.d;
        let flip = if tr != 0.0 {
            tr < 0.0
        } else {
            let lead =
                if self.a != 0.0 { self.a } else if self.b != 0.0 { self.b } else { self.c };
            lead < 0.0
        };
        if flip {
            self.a = -self.a;
            self.b = -self.b;
            self.c = -self.c;
            self.d = -self.d;
        }
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn compose(&self, other: &Isometry) -> Isometry {
        let mut m = Isometry {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
        };
        m.canonicalize_sign();
        m
    }

    pub fn inverse(&self) -> Isometry {
        let mut m = Isometry { a: self.d, b: -self.b, c: -self.c, d: self.a };
        m.canonicalize_sign();
        m
    }

    pub fn pow(&self, n: i64) -> Isometry {
        let mut base = if n >= 0 { *self } else { self.inverse() };
        let mut k = n.unsigned_abs();
        let mut acc = Isometry::identity();
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.compose(&base);
            }
            base = base.compose(&base);
            k >>= 1;
        }
        acc
    }

    pub fn classify(&self) -> IsometryClass {
        if (self.a - 1.0).abs() < 1e-12
            && (self.d - 1.0).abs() < 1e-12
            && self.b.abs() < 1e-12
            && self.c.abs() < 1e-12
        {
            return IsometryClass::Identity;
        }
        let tr = (self.a + self.d).abs();
        if (tr - 2.0).abs() < 1e-12 {
            IsometryClass::Parabolic
        } else if tr > 2.0 {
            IsometryClass::Hyperbolic
        } else {
            IsometryClass::Elliptic
        }
    }

    pub fn apply(&self, z: HPoint) -> HPoint {
        // (az+b)(conj(cz+d)) / |cz+d|^2 with z = x + iy. Uses det = 1 (the
        // class invariant) instead of the computed ad - bc, which loses all
        // precision for strongly contracting products.
        let (x, y) = (z.x, z.y);
        let re_num = self.a * x + self.b;
        let re_den = self.c * x + self.d;
        let denom = re_den * re_den + self.c * self.c * y * y;
        HPoint {
            x: (re_num * re_den + self.a * self.c * y * y) / denom,
            y: y / denom,
        }
    }

    pub fn apply_boundary(&self, p: BoundaryPoint) -> BoundaryPoint {
        match p {
            BoundaryPoint::Infinity => {
                if self.c == 0.0 {
                    BoundaryPoint::Infinity
                } else {
                    BoundaryPoint::Finite(self.a / self.c)
                }
            }
            BoundaryPoint::Finite(x) => {
                let den = self.c * x + self.d;
                if den == 0.0 {
                    BoundaryPoint::Infinity
                } else {
                    BoundaryPoint::Finite((self.a * x + self.b) / den)
                }
            }
        }
    }

    /// Fixed points; (repelling, attracting) for hyperbolic elements.
    pub fn fixed_points(&self) -> Vec<BoundaryPoint> {
        match self.classify() {
            IsometryClass::Identity | IsometryClass::Elliptic => Vec::new(),
            IsometryClass::Parabolic => {
                if self.c == 0.0 {
                    vec![BoundaryPoint::Infinity]
                } else {
                    vec![BoundaryPoint::Finite((self.a - self.d) / (2.0 * self.c))]
                }
            }
            IsometryClass::Hyperbolic => {
                let tr = self.a + self.d;
                if self.c == 0.0 {
                    // Fixes infinity; the finite fixed point is b/(d-a).
                    let finite = BoundaryPoint::Finite(self.b / (self.d - self.a));
                    if self.a.abs() > self.d.abs() {
                        // |a| > |d| means infinity is attracting.
                        vec![finite, BoundaryPoint::Infinity]
                    } else {
                        vec![BoundaryPoint::Infinity, finite]
                    }
                } else {
                    let disc = (tr * tr - 4.0).sqrt();
                    let x1 = (self.a - self.d + disc) / (2.0 * self.c);
                    let x2 = (self.a - self.d - disc) / (2.0 * self.c);
                    // Attracting fixed point has |derivative| < 1: |cx+d| > 1.
                    let d1 = (self.c * x1 + self.d).abs();
                    if d1 > 1.0 {
                        vec![BoundaryPoint::Finite(x2), BoundaryPoint::Finite(x1)]
                    } else {
                        vec![BoundaryPoint::Finite(x1), BoundaryPoint::Finite(x2)]
                    }
                }
            }
        }
    }
}

/// Hyperbolic distance between half-plane points.
pub fn dist(z: HPoint, w: HPoint) -> f64 {
    let dx = z.x - w.x;
    let dy = z.y - w.y;
    (1.0 + (dx * dx + dy * dy) / (2.0 * z.y * w.y)).acosh()
}

/// Horospherical height of `w` seen from boundary point `x`: a Busemann
/// primitive, normalized so differences give the Busemann cocycle.
fn height(x: BoundaryPoint, w: HPoint) -> f64 {
    match x {
        BoundaryPoint::Infinity => w.y.ln(),
        BoundaryPoint::Finite(p) => {
            let dx = w.x - p;
            (w.y / (dx * dx + w.y * w.y)).ln()
        }
    }
}

/// Busemann cocycle B_x(z, w): signed horospherical gain from z to w toward x.
pub fn busemann(x: BoundaryPoint, z: HPoint, w: HPoint) -> f64 {
    height(x, w) - height(x, z)
}

/// Gromov product (x|y)_o of two distinct boundary points.
pub fn gromov(x: BoundaryPoint, y: BoundaryPoint, o: HPoint) -> Result<f64> {
    let n = match (x, y) {
        (BoundaryPoint::Infinity, BoundaryPoint::Infinity) => {
            return Err(Error::Validation("gromov product needs distinct boundary points".into()))
        }
        (BoundaryPoint::Finite(a), BoundaryPoint::Finite(b)) => {
            if a == b {
                return Err(Error::Validation(
                    "gromov product needs distinct boundary points".into(),
                ));
            }
            (a - b).abs()
        }
        _ => 1.0,
    };
    Ok(-n.ln() - 0.5 * (height(x, o) + height(y, o)))
}

/// The cocycle b(gamma, x) = B_x(gamma^{-1} o, o) at the base point o.
pub fn cocycle_b(gamma: &Isometry, x: BoundaryPoint, o: HPoint) -> f64 {
    let pre = gamma.inverse().apply(o);
    busemann(x, pre, o)
}

/// Conformal derivative |gamma'(x)|_o = exp(-b(gamma, x)).
pub fn conformal_derivative(gamma: &Isometry, x: BoundaryPoint, o: HPoint) -> f64 {
    (-cocycle_b(gamma, x, o)).exp()
}

/// Visual metric D(x, y) = exp(-(x|y)_o), with D(x, x) = 0.
pub fn visual_metric(x: BoundaryPoint, y: BoundaryPoint, o: HPoint) -> f64 {
    match gromov(x, y, o) {
        Ok(g) => (-g).exp(),
        Err(_) => 0.0,
    }
}

/// Closed arc of the boundary circle.
///
/// `through_infinity = false`: the interval [lo, hi]. `true`: the complement
/// piece `[hi, +inf] ∪ {inf} ∪ [-inf, lo]`, i.e. everything outside (lo, hi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub through_infinity: bool,
}

impl Arc {
    pub fn finite(lo: f64, hi: f64) -> Result<Arc> {
        if !(lo < hi) {
            return Err(Error::Validation(format!("arc needs lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Arc { lo, hi, through_infinity: false })
    }

    pub fn through_infinity(lo: f64, hi: f64) -> Result<Arc> {
        if !(lo < hi) {
            return Err(Error::Validation(format!(
                "arc through infinity needs lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Arc { lo, hi, through_infinity: true })
    }

    pub fn contains(&self, p: BoundaryPoint) -> bool {
        match p {
            BoundaryPoint::Infinity => self.through_infinity,
            BoundaryPoint::Finite(x) => {
                if self.through_infinity {
                    x <= self.lo || x >= self.hi
                } else {
                    self.lo <= x && x <= self.hi
                }
            }
        }
    }

    /// Signed margin by which `p` sits inside the arc (negative outside).
    pub fn depth(&self, p: BoundaryPoint) -> f64 {
        match p {
            BoundaryPoint::Infinity => {
                if self.through_infinity {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            }
            BoundaryPoint::Finite(x) => {
                if self.through_infinity {
                    (self.lo - x).max(x - self.hi)
                } else {
                    (x - self.lo).min(self.hi - x)
                }
            }
        }
    }

    pub fn disjoint_from(&self, other: &Arc) -> bool {
        match (self.through_infinity, other.through_infinity) {
            (false, false) => self.hi < other.lo || other.hi < self.lo,
            (true, false) => self.lo < other.lo && other.hi < self.hi,
            (false, true) => other.lo < self.lo && self.hi < other.hi,
            (true, true) => false,
        }
    }

    /// Representative interior samples (quarter points), used as ping-pong
    /// witnesses.
    pub fn samples(&self) -> Vec<BoundaryPoint> {
        if self.through_infinity {
            let w = self.hi - self.lo;
            vec![
                BoundaryPoint::Finite(self.lo - 0.25 * w),
                BoundaryPoint::Infinity,
                BoundaryPoint::Finite(self.hi + 0.25 * w),
            ]
        } else {
            let w = self.hi - self.lo;
            vec![
                BoundaryPoint::Finite(self.lo + 0.25 * w),
                BoundaryPoint::Finite(self.lo + 0.5 * w),
                BoundaryPoint::Finite(self.lo + 0.75 * w),
            ]
        }
    }
}

/// Elementary factor kind of a Schottky product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Parabolic,
    Hyperbolic,
}

/// One elementary factor: a cyclic group with its ping-pong arcs.
#[derive(Debug, Clone)]
pub struct SchottkyFactor {
    pub generator: Isometry,
    pub kind: FactorKind,
    /// (repelling, attracting) for hyperbolic; the single fixed point for
    /// parabolic.
    pub fixed_points: Vec<BoundaryPoint>,
    pub arcs: Vec<Arc>,
}

impl SchottkyFactor {
    pub fn contains(&self, p: BoundaryPoint) -> bool {
        self.arcs.iter().any(|a| a.contains(p))
    }

    pub fn depth(&self, p: BoundaryPoint) -> f64 {
        self.arcs.iter().map(|a| a.depth(p)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Validated Schottky product data.
#[derive(Debug, Clone)]
pub struct SchottkyData {
    pub factors: Vec<SchottkyFactor>,
    pub base: HPoint,
    pub x0: BoundaryPoint,
    pub cusp_profile: Option<CuspProfile>,
}

/// Ping-pong validation report.
#[derive(Debug, Clone)]
pub struct SchottkyReport {
    /// Smallest gap between distinct arcs (in boundary coordinate).
    pub min_gap: f64,
    /// Worst-case interior depth of any checked image inside its target arc.
    pub min_pingpong_margin: f64,
    pub checked_powers: i64,
}

impl SchottkyData {
    /// The two-factor family: p: z -> z + tau against the m-th power of a
    /// hyperbolic element with fixed points -1 (repelling) and +1
    /// (attracting) and multiplier lambda.
    ///
    /// Arcs are suggested from isometric circles: the parabolic keeps the arc
    /// through infinity outside (-0.45 tau, 0.45 tau), the hyperbolic factor
    /// keeps the two isometric-circle intervals of h^m and h^-m. Powers of a
    /// generator map the complement of its own arcs strictly inside them, so
    /// the ping-pong check is a margin measurement rather than a tuning knob.
    pub fn two_factor_family(
        tau: f64,
        lambda: f64,
        m: u32,
        cusp_profile: Option<CuspProfile>,
    ) -> Result<SchottkyData> {
        if !(tau > 0.0) || !(lambda > 1.0) || m == 0 {
            return Err(Error::Validation(format!(
                "family needs tau > 0, lambda > 1, m >= 1, got ({tau}, {lambda}, {m})"
            )));
        }
        let p = Isometry::translation(tau);
        let lam_m = lambda.powi(m as i32);
        let h = Isometry::hyperbolic_through(-1.0, 1.0, lam_m)?;
        // Isometric circles of h^m and h^-m: centers -+ (lam^2+1)/(lam^2-1),
        // radius 2 lam/(lam^2-1) (in terms of lam = lam_m).
        let c0 = (lam_m * lam_m + 1.0) / (lam_m * lam_m - 1.0);
        let r0 = 2.0 * lam_m / (lam_m * lam_m - 1.0);
        let data = SchottkyData {
            factors: vec![
                SchottkyFactor {
                    generator: p,
                    kind: FactorKind::Parabolic,
                    fixed_points: vec![BoundaryPoint::Infinity],
                    arcs: vec![Arc::through_infinity(-0.45 * tau, 0.45 * tau)?],
                },
                SchottkyFactor {
                    generator: h,
                    kind: FactorKind::Hyperbolic,
                    fixed_points: vec![BoundaryPoint::Finite(-1.0), BoundaryPoint::Finite(1.0)],
                    arcs: vec![Arc::finite(-c0 - r0, -c0 + r0)?, Arc::finite(c0 - r0, c0 + r0)?],
                },
            ],
            base: HPoint::base(),
            x0: BoundaryPoint::Finite(0.0),
            cusp_profile,
        };
        Ok(data)
    }

    pub fn factor(&self, j: usize) -> &SchottkyFactor {
        &self.factors[j]
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    /// True when `p` lies in no factor arc.
    pub fn outside_all(&self, p: BoundaryPoint) -> bool {
        self.factors.iter().all(|f| !f.contains(p))
    }

    /// Disjointness and ping-pong up to exponent `n_check`, with margins.
    pub fn validate(&self, n_check: i64) -> Result<SchottkyReport> {
        if self.factors.len() < 2 {
            return Err(Error::Validation("need at least two factors".into()));
        }
        if n_check < 1 {
            return Err(Error::Validation("n_check must be at least 1".into()));
        }
        // Pairwise disjoint arcs with positive gaps.
        let mut all_arcs: Vec<(usize, Arc)> = Vec::new();
        for (j, f) in self.factors.iter().enumerate() {
            if f.arcs.is_empty() {
                return Err(Error::Validation(format!("factor {j} has no arcs")));
            }
            for &a in &f.arcs {
                all_arcs.push((j, a));
            }
        }
        let mut min_gap = f64::INFINITY;
        for i in 0..all_arcs.len() {
            for k in i + 1..all_arcs.len() {
                let (ji, ai) = all_arcs[i];
                let (jk, ak) = all_arcs[k];
                if !ai.disjoint_from(&ak) {
                    return Err(Error::Validation(format!(
                        "arcs of factors {ji} and {jk} overlap: {ai:?} vs {ak:?}"
                    )));
                }
                min_gap = min_gap.min(arc_gap(&ai, &ak));
            }
        }
        if !self.outside_all(self.x0) {
            return Err(Error::Validation(format!(
                "base boundary point {} lies inside a factor arc",
                self.x0
            )));
        }
        // Ping-pong: every nonidentity power maps the complement of its own
        // arcs into them. Möbius maps send arcs to arcs, so endpoint plus
        // interior witnesses of every complement piece certify containment.
        let mut min_margin = f64::INFINITY;
        for (j, f) in self.factors.iter().enumerate() {
            let witnesses = self.complement_witnesses(j);
            for n in 1..=n_check {
                for g in [f.generator.pow(n), f.generator.pow(-n)] {
                    for &w in &witnesses {
                        let img = g.apply_boundary(w);
                        let depth = f.depth(img);
                        if !f.contains(img) {
                            return Err(Error::Validation(format!(
                                "ping-pong violation: factor {j} power {n}: witness {w} maps to {img} outside its arcs"
                            )));
                        }
                        min_margin = min_margin.min(depth);
                    }
                }
            }
        }
        Ok(SchottkyReport { min_gap, min_pingpong_margin: min_margin, checked_powers: n_check })
    }

    /// Witness points covering the complement of factor j's arcs: all other
    /// factors' arc samples, the endpoints of the gaps, and x0.
    fn complement_witnesses(&self, j: usize) -> Vec<BoundaryPoint> {
        let mut pts = vec![self.x0];
        for (k, f) in self.factors.iter().enumerate() {
            if k == j {
                continue;
            }
            for a in &f.arcs {
                pts.extend(a.samples());
                pts.push(BoundaryPoint::Finite(a.lo));
                pts.push(BoundaryPoint::Finite(a.hi));
            }
        }
        // Edges of factor j's own arcs, nudged just outside.
        for a in &self.factors[j].arcs {
            let w = (a.hi - a.lo) * 1e-9;
            if a.through_infinity {
                pts.push(BoundaryPoint::Finite(a.lo + w));
                pts.push(BoundaryPoint::Finite(a.hi - w));
            } else {
                pts.push(BoundaryPoint::Finite(a.lo - w));
                pts.push(BoundaryPoint::Finite(a.hi + w));
            }
        }
        pts.retain(|p| !self.factors[j].contains(*p));
        pts
    }
}

/// Gap between two disjoint arcs along the circle (coordinate distance).
fn arc_gap(a: &Arc, b: &Arc) -> f64 {
    match (a.through_infinity, b.through_infinity) {
        (false, false) => {
            if a.hi < b.lo {
                b.lo - a.hi
            } else {
                a.lo - b.hi
            }
        }
        (true, false) => (b.lo - a.lo).min(a.hi - b.hi),
        (false, true) => (a.lo - b.lo).min(b.hi - a.hi),
        (true, true) => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_isometry(rng: &mut ChaCha8Rng) -> Isometry {
        // Product of elementary translations and scalings stays well away
        // from degenerate determinants.
        let t1 = Isometry::translation(rng.gen_range(-3.0..3.0));
        let s = Isometry::hyperbolic_through(-1.0, 1.0, rng.gen_range(1.2..4.0)).unwrap();
        let t2 = Isometry::translation(rng.gen_range(-3.0..3.0));
        t1.compose(&s).compose(&t2)
    }

    #[test]
    fn determinant_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let g = random_isometry(&mut rng);
            assert!((g.det() - 1.0).abs() <= 1e-12);
            let gi = g.compose(&g.inverse());
            assert!((gi.a - 1.0).abs() <= 1e-10);
            assert!((gi.d - 1.0).abs() <= 1e-10);
            assert!(gi.b.abs() <= 1e-10);
            assert!(gi.c.abs() <= 1e-10);
        }
    }

    #[test]
    fn deep_products_stay_finite_and_accurate() {
        // Composed det-one products must not be rescaled by their computed
        // determinant (catastrophic cancellation at large entries). This
        // exact composition used to blow up to inf.
        let p = Isometry::translation(6.0);
        let h = Isometry::hyperbolic_through(-1.0, 1.0, 8.0).unwrap();
        let w = p.pow(-5).compose(&h.pow(4)).compose(&p.pow(-2)).compose(&h.pow(5));
        for e in [w.a, w.b, w.c, w.d] {
            assert!(e.is_finite(), "entries must stay finite, got {w:?}");
        }
        // Distances keep growing (by at least the letter floor minus the
        // ping-pong defect) along alternating powers, far past the point
        // where ad - bc loses all precision.
        let o = HPoint::base();
        let mut g = Isometry::identity();
        let mut last = 0.0;
        for k in 1..=40 {
            g = g.compose(&p).compose(&h);
            let d = dist(o, g.apply(o));
            assert!(
                d.is_finite() && d > last + 1.0,
                "distance stalled at step {k}: {last} -> {d}"
            );
            last = d;
        }
    }

    #[test]
    fn known_distances() {
        let i = HPoint::base();
        assert_eq!(dist(i, i), 0.0);
        assert_relative_eq!(dist(i, HPoint::new(0.0, 4.0).unwrap()), 4.0f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(
            dist(i, HPoint::new(1.0, 1.0).unwrap()),
            1.5f64.acosh(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn distance_is_isometry_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let g = random_isometry(&mut rng);
            let z = HPoint::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.1..5.0)).unwrap();
            let w = HPoint::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.1..5.0)).unwrap();
            assert!((dist(g.apply(z), g.apply(w)) - dist(z, w)).abs() <= 1e-10);
        }
    }

    #[test]
    fn busemann_vertical_ray() {
        let i = HPoint::base();
        for t in [-2.0f64, 0.5, 3.0] {
            let w = HPoint::new(0.0, t.exp()).unwrap();
            assert_relative_eq!(busemann(BoundaryPoint::Infinity, i, w), t, max_relative = 1e-12);
        }
        assert_eq!(busemann(BoundaryPoint::Finite(2.0), i, i), 0.0);
    }

    #[test]
    fn busemann_cocycle_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x = if rng.gen_bool(0.2) {
                BoundaryPoint::Infinity
            } else {
                BoundaryPoint::Finite(rng.gen_range(-10.0..10.0))
            };
            let z = HPoint::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.1..5.0)).unwrap();
            let w = HPoint::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.1..5.0)).unwrap();
            let v = HPoint::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.1..5.0)).unwrap();
            let lhs = busemann(x, z, w) + busemann(x, w, v);
            assert!((lhs - busemann(x, z, v)).abs() <= 1e-10);
        }
    }

    #[test]
    fn gromov_on_geodesics_through_base() {
        let o = HPoint::base();
        let g1 = gromov(BoundaryPoint::Finite(0.0), BoundaryPoint::Infinity, o).unwrap();
        assert!(g1.abs() <= 1e-12);
        let g2 = gromov(BoundaryPoint::Finite(-1.0), BoundaryPoint::Finite(1.0), o).unwrap();
        assert!(g2.abs() <= 1e-12);
        assert!(gromov(BoundaryPoint::Infinity, BoundaryPoint::Infinity, o).is_err());
    }

    #[test]
    fn visual_metric_conformal_property() {
        // D(gx, gy) = sqrt(|g'(x)| |g'(y)|) D(x, y).
        let o = HPoint::base();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let g = random_isometry(&mut rng);
            let x = BoundaryPoint::Finite(rng.gen_range(-4.0..4.0));
            let y = BoundaryPoint::Finite(rng.gen_range(-4.0..4.0));
            if x.approx_eq(&y, 1e-6) {
                continue;
            }
            let lhs = visual_metric(g.apply_boundary(x), g.apply_boundary(y), o);
            let rhs = (conformal_derivative(&g, x, o) * conformal_derivative(&g, y, o)).sqrt()
                * visual_metric(x, y, o);
            assert!(
                (lhs - rhs).abs() <= 1e-9 * lhs.max(1.0),
                "conformal property violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn cocycle_b_identities() {
        let o = HPoint::base();
        assert_eq!(cocycle_b(&Isometry::identity(), BoundaryPoint::Finite(3.0), o), 0.0);
        // Diagonal hyperbolic with axis through o: b(h^n, attracting) = n * 2 log lambda.
        let lambda = 2.0;
        let h = Isometry::new(lambda, 0.0, 0.0, 1.0 / lambda).unwrap();
        for n in [1i64, 2, 5] {
            let b = cocycle_b(&h.pow(n), BoundaryPoint::Infinity, o);
            assert_relative_eq!(b, 2.0 * n as f64 * lambda.ln(), max_relative = 1e-10);
        }
        // Cocycle identity on random splits.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let g1 = random_isometry(&mut rng);
            let g2 = random_isometry(&mut rng);
            let x = BoundaryPoint::Finite(rng.gen_range(-5.0..5.0));
            let lhs = cocycle_b(&g1.compose(&g2), x, o);
            let rhs = cocycle_b(&g1, g2.apply_boundary(x), o) + cocycle_b(&g2, x, o);
            assert!((lhs - rhs).abs() <= 1e-10, "cocycle identity violated");
        }
    }

    #[test]
    fn parabolic_cocycle_matches_distance_minus_gromov() {
        // b(p^n, x) approaches d(o, p^n o) - 2 (x_P | x)_o as n grows.
        let o = HPoint::base();
        let tau = 3.0;
        let p = Isometry::translation(tau);
        let x = BoundaryPoint::Finite(2.0);
        let gp = gromov(BoundaryPoint::Infinity, x, o).unwrap();
        let mut prev = f64::INFINITY;
        for n in [10i64, 100, 1000, 10000] {
            let b = cocycle_b(&p.pow(n), x, o);
            let d = dist(o, p.pow(n).apply(o));
            let gap = (b - (d - 2.0 * gp)).abs();
            assert!(gap < prev, "gap not shrinking at n = {n}");
            prev = gap;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn busemann_bounded_by_distance() {
        let o = HPoint::base();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..500 {
            let g = random_isometry(&mut rng);
            let x = BoundaryPoint::Finite(rng.gen_range(-8.0..8.0));
            let b = cocycle_b(&g, x, o);
            let d = dist(o, g.inverse().apply(o));
            assert!(b <= d + 1e-10, "cocycle exceeded distance: {b} > {d}");
        }
    }

    #[test]
    fn fixed_points_of_family_generators() {
        let h = Isometry::hyperbolic_through(-1.0, 1.0, 3.0).unwrap();
        let fps = h.fixed_points();
        assert!(fps[0].approx_eq(&BoundaryPoint::Finite(-1.0), 1e-12));
        assert!(fps[1].approx_eq(&BoundaryPoint::Finite(1.0), 1e-12));
        // Attracting point really attracts.
        let img = h.pow(20).apply_boundary(BoundaryPoint::Finite(50.0));
        assert!(img.approx_eq(&BoundaryPoint::Finite(1.0), 1e-6));

        let p = Isometry::translation(4.0);
        assert!(p.fixed_points()[0].is_infinity());
        assert_eq!(p.classify(), IsometryClass::Parabolic);
        assert_eq!(h.classify(), IsometryClass::Hyperbolic);
    }

    #[test]
    fn arc_containment_and_disjointness() {
        let fin = Arc::finite(-1.0, 1.0).unwrap();
        assert!(fin.contains(BoundaryPoint::Finite(0.0)));
        assert!(!fin.contains(BoundaryPoint::Infinity));
        let inf = Arc::through_infinity(-2.0, 2.0).unwrap();
        assert!(inf.contains(BoundaryPoint::Infinity));
        assert!(inf.contains(BoundaryPoint::Finite(-3.0)));
        assert!(!inf.contains(BoundaryPoint::Finite(0.0)));
        assert!(fin.disjoint_from(&inf));
        assert!(!fin.disjoint_from(&Arc::finite(0.5, 3.0).unwrap()));
    }

    #[test]
    fn standard_family_validates() {
        let data = SchottkyData::two_factor_family(5.0, 3.0, 1, None).unwrap();
        let report = data.validate(8).unwrap();
        assert!(report.min_gap > 0.0);
        assert!(report.min_pingpong_margin > 0.0);
    }

    #[test]
    fn overlapping_intervals_fail() {
        let mut data = SchottkyData::two_factor_family(5.0, 3.0, 1, None).unwrap();
        // Stretch the parabolic arc until it eats the hyperbolic ones.
        data.factors[0].arcs = vec![Arc::through_infinity(-0.1, 0.1).unwrap()];
        assert!(data.validate(4).is_err());
    }

    #[test]
    fn tight_parabolic_arc_fails_validation() {
        // tau = 4 leaves the parabolic arc at +-1.8 while the lambda = 3
        // isometric circles reach out to +-2: the arcs collide.
        let data = SchottkyData::two_factor_family(4.0, 3.0, 1, None).unwrap();
        assert!(data.validate(4).is_err());
    }

    #[test]
    fn weak_hyperbolic_fails_validation() {
        // lambda close to 1 pushes the isometric circles across the parabolic
        // arc: disjointness breaks.
        assert!(SchottkyData::two_factor_family(4.0, 1.05, 1, None)
            .unwrap()
            .validate(4)
            .is_err());
    }

    #[test]
    fn x0_inside_an_arc_fails() {
        let mut data = SchottkyData::two_factor_family(5.0, 3.0, 1, None).unwrap();
        data.x0 = BoundaryPoint::Finite(1.0);
        assert!(data.validate(2).is_err());
    }
}

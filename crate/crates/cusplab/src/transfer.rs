//! Discretized Ruelle transfer operators on boundary meshes.
//!
//! For a free product of elementary factors acting on the boundary circle,
//! the operator at inverse temperature `s` sums one-letter extensions
//!
//! `(L_s phi)(x) = sum_a 1{x outside the arcs of a's factor} e^{-s b~(a,x)} phi(a x)`
//!
//! over letters `a = g_j^n` with `0 < |n| <= N_j`. Functions live as
//! piecewise-linear data on per-arc grids plus the isolated base boundary
//! point. An arc through infinity is meshed in the chart `w = -1/x`, which
//! turns the accumulation of parabolic images at the fixed point into a
//! uniform grid and makes the fixed point itself an exact mesh node.
//!
//! Truncation runs in two modes. `Raw` drops letters beyond the per-factor
//! cap, so spectral radii are nondecreasing in the cap. `Augmented` adds the
//! whole dropped parabolic tail as one rank-one stencil: in the cusp-priced
//! model the letter weight factors exactly as
//! `e^{-s d(|n| tau)} * e^{2s (x_P|x)}`, so the tail letters sum to
//! `S(s, N) * e^{2s (x_P|x)} * phi(x_P)` where `S(s, N) = sum_{n>N} e^{-s d(n tau)}`
//! is computed head-by-summation, middle-by-quadrature over the distance
//! cache, and far end by an asymptotic continuation fitted to the cache tail.
//! With slowly-decaying cusp tails (`alpha` barely above 1 at `s = 1/2`) the
//! dropped letters carry most of the factor's mass, so the augmentation is
//! what makes spectral quantities stable under truncation doubling.
//!
//! The two-factor free products studied here are bipartite: letters of one
//! factor act only on points owned by the other, so the peripheral spectrum
//! is the pair `{rho, -rho}`. Power iteration therefore runs on the two-step
//! operator `L^2`, brackets `rho^2` by Collatz-Wielandt ratios (valid bounds
//! for nonnegative matrices at every iterate), and reconstructs the
//! eigenfunction of `L` itself from one extra application.

use crate::coding::{letter_cocycle_boundary, parabolic_translation, DistanceModel, Letter, Word};
use crate::error::{Error, Result};
use crate::hyperbolic::{gromov, Arc, BoundaryPoint, FactorKind, SchottkyData};
use crate::quad::adaptive_simpson;
use rayon::prelude::*;

/// Positivity floor for eigenfunction values entering denominators.
const H_FLOOR: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Boundary meshes
// ---------------------------------------------------------------------------

/// One meshed arc. `w_chart = true` means node coordinates are `w = -1/x`
/// (used for arcs through infinity, where `w = 0` is the point at infinity).
#[derive(Debug, Clone)]
pub struct MeshChart {
    pub factor: usize,
    pub arc: Arc,
    pub w_chart: bool,
    /// Strictly increasing chart coordinates, strictly inside the arc.
    pub nodes: Vec<f64>,
    /// Global index of `nodes[0]`.
    pub offset: usize,
}

impl MeshChart {
    fn coord(&self, p: BoundaryPoint) -> Result<f64> {
        if self.w_chart {
            match p {
                BoundaryPoint::Infinity => Ok(0.0),
                BoundaryPoint::Finite(x) => {
                    if x == 0.0 {
                        return Err(Error::Numeric(
                            "w-chart coordinate requested at x = 0".into(),
                        ));
                    }
                    Ok(-1.0 / x)
                }
            }
        } else {
            match p {
                BoundaryPoint::Infinity => {
                    Err(Error::Numeric("finite chart cannot hold infinity".into()))
                }
                BoundaryPoint::Finite(x) => Ok(x),
            }
        }
    }

    fn point(&self, w: f64) -> BoundaryPoint {
        if self.w_chart {
            if w == 0.0 {
                BoundaryPoint::Infinity
            } else {
                BoundaryPoint::Finite(-1.0 / w)
            }
        } else {
            BoundaryPoint::Finite(w)
        }
    }
}

/// Piecewise-linear function space: per-arc grids plus the isolated base
/// boundary point `x0`, stored as the last slot.
#[derive(Debug, Clone)]
pub struct BoundaryMesh {
    pub charts: Vec<MeshChart>,
    /// Boundary position of every slot (last one is `x0`).
    pub points: Vec<BoundaryPoint>,
    /// Owning factor of every slot; `None` for the `x0` slot.
    pub owner: Vec<Option<usize>>,
    pub x0: BoundaryPoint,
}

impl BoundaryMesh {
    /// Mesh every factor arc with about `nodes_per_arc` interior nodes.
    ///
    /// Arcs through infinity get a symmetric grid in `w = -1/x` with the
    /// fixed point `w = 0` as an exact node; finite arcs get a uniform grid
    /// with half-cell margins, so all grids sit strictly inside their arcs.
    pub fn build(data: &SchottkyData, nodes_per_arc: usize) -> Result<BoundaryMesh> {
        if nodes_per_arc < 8 {
            return Err(Error::Validation(format!(
                "mesh needs at least 8 nodes per arc, got {nodes_per_arc}"
            )));
        }
        let mut charts = Vec::new();
        let mut points = Vec::new();
        let mut owner = Vec::new();
        let mut offset = 0usize;
        for (j, f) in data.factors.iter().enumerate() {
            for arc in &f.arcs {
                let (w_chart, nodes) = if arc.through_infinity {
                    if !(arc.lo < 0.0 && arc.hi > 0.0) {
                        return Err(Error::Validation(format!(
                            "arc through infinity must straddle x = 0 for the -1/x chart, \
                             got [{}, {}]",
                            arc.lo, arc.hi
                        )));
                    }
                    let wl = -1.0 / arc.hi;
                    let wr = -1.0 / arc.lo;
                    let k = (nodes_per_arc / 2).max(4);
                    let mut v = Vec::with_capacity(2 * k + 1);
                    for i in 0..k {
                        v.push(wl * (k as f64 - i as f64 - 0.5) / k as f64);
                    }
                    v.push(0.0);
                    for i in 1..=k {
                        v.push(wr * (i as f64 - 0.5) / k as f64);
                    }
                    (true, v)
                } else {
                    let h = (arc.hi - arc.lo) / nodes_per_arc as f64;
                    let v = (0..nodes_per_arc)
                        .map(|i| arc.lo + (i as f64 + 0.5) * h)
                        .collect();
                    (false, v)
                };
                let chart = MeshChart { factor: j, arc: *arc, w_chart, nodes, offset };
                for &w in &chart.nodes {
                    points.push(chart.point(w));
                    owner.push(Some(j));
                }
                offset += chart.nodes.len();
                charts.push(chart);
            }
        }
        if !data.outside_all(data.x0) {
            return Err(Error::Validation("base boundary point lies inside a factor arc".into()));
        }
        points.push(data.x0);
        owner.push(None);
        Ok(BoundaryMesh { charts, points, owner, x0: data.x0 })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn x0_index(&self) -> usize {
        self.points.len() - 1
    }

    /// Interpolation stencil for a point inside one of `factor`'s arcs:
    /// global left index and fraction in `[0, 1]` (clamped at grid ends).
    pub fn locate(&self, factor: usize, p: BoundaryPoint) -> Result<(usize, f64)> {
        for chart in self.charts.iter().filter(|c| c.factor == factor) {
            if chart.arc.contains(p) {
                let w = chart.coord(p)?;
                let n = chart.nodes.len();
                let i = chart.nodes.partition_point(|&v| v <= w);
                let left = i.saturating_sub(1).min(n - 2);
                let span = chart.nodes[left + 1] - chart.nodes[left];
                let frac = ((w - chart.nodes[left]) / span).clamp(0.0, 1.0);
                return Ok((chart.offset + left, frac));
            }
        }
        Err(Error::Numeric(format!(
            "pushforward point {p} lands outside every arc of factor {factor}; \
             ping-pong data is invalid"
        )))
    }

    /// Evaluate a mesh function at a boundary point (a chart point or `x0`).
    pub fn eval(&self, values: &[f64], p: BoundaryPoint) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::Validation(format!(
                "mesh function has {} slots, mesh has {}",
                values.len(),
                self.len()
            )));
        }
        if p == self.x0 {
            return Ok(values[self.x0_index()]);
        }
        for chart in &self.charts {
            if chart.arc.contains(p) {
                let (left, frac) = self.locate(chart.factor, p)?;
                return Ok((1.0 - frac) * values[left] + frac * values[left + 1]);
            }
        }
        Err(Error::Validation(format!(
            "point {p} is neither the base boundary point nor inside any meshed arc"
        )))
    }
}

// ---------------------------------------------------------------------------
// Parabolic tail masses
// ---------------------------------------------------------------------------

/// One-sided dropped-letter mass `S(s, N) = sum_{n > N} e^{-s d(n tau)}` of a
/// parabolic factor, split by evaluation regime.
#[derive(Debug, Clone, Copy)]
pub struct TailBreakdown {
    pub total: f64,
    /// Exact term-by-term sum just past the truncation.
    pub head: f64,
    /// Quadrature over the cached distance curve (with the Euler-Maclaurin
    /// switch correction folded in).
    pub mid: f64,
    /// Analytic continuation beyond the cache range.
    pub far: f64,
    /// Quadrature error plus the continuation allowance; an absolute bound
    /// on how wrong `total` may be.
    pub uncertainty: f64,
}

/// Unperturbed parabolic orbit distance for horizontal displacement `u`:
/// `arccosh(1 + u^2/2) = 2 asinh(u/2)`.
fn d_unperturbed(u: f64) -> f64 {
    2.0 * (0.5 * u).asinh()
}

/// True when the full parabolic letter series is known to diverge at `s`,
/// so no finite tail mass exists.
pub fn parabolic_series_diverges(data: &SchottkyData, model: &DistanceModel, s: f64) -> bool {
    let has_parabolic =
        data.factors.iter().any(|f| f.kind == FactorKind::Parabolic);
    if !has_parabolic {
        return false;
    }
    match model {
        // d(o, p^n o) = 2 log n + O(1): sum n^{-2s} diverges at s = 1/2.
        DistanceModel::ExactH2 => s <= 0.5 + 1e-12,
        // Cusp pricing adds the slowly varying factor n^{-2s} (log n)^{-2s alpha};
        // below 1/2 the series always diverges, at 1/2 it converges iff
        // alpha > 1, which the profile certification already enforces.
        DistanceModel::ModifiedCusp { .. } => s < 0.5 - 1e-12,
    }
}

/// One-sided tail mass of a parabolic factor past exponent `n_trunc`.
pub fn factor_tail_mass(
    data: &SchottkyData,
    model: &DistanceModel,
    factor: usize,
    s: f64,
    n_trunc: i64,
) -> Result<TailBreakdown> {
    if data.factor(factor).kind != FactorKind::Parabolic {
        return Err(Error::Validation(format!("factor {factor} is not parabolic")));
    }
    if n_trunc < 1 {
        return Err(Error::Validation(format!("truncation must be >= 1, got {n_trunc}")));
    }
    if parabolic_series_diverges(data, model, s) {
        return Err(Error::Numeric(format!(
            "parabolic letter series diverges at s = {s} in this distance model"
        )));
    }
    let tau = parabolic_translation(data, factor)?;
    let n = n_trunc as f64;
    match model {
        DistanceModel::ExactH2 => {
            // Closed-form distances: sum a head, then switch to the exact
            // primitive of e^{-2s asinh(u/2)} (substitute u = 2 sinh v).
            let m = (2 * n_trunc).max(8192);
            let mut head = 0.0;
            for k in (n_trunc + 1)..=m {
                head += (-s * d_unperturbed(k as f64 * tau)).exp();
            }
            let a = (m as f64 + 0.5) * tau;
            let v = (0.5 * a).asinh();
            let integral = (((1.0 - 2.0 * s) * v).exp() / (2.0 * s - 1.0)
                + (-(1.0 + 2.0 * s) * v).exp() / (1.0 + 2.0 * s))
                / tau;
            let g = (-s * d_unperturbed(a)).exp();
            let em = -(tau / 24.0) * s * (2.0 / (4.0 + a * a).sqrt()) * g;
            // The rank-one augmentation prices tail letters through the fixed
            // point; in the unperturbed model that is only O(1/u)-accurate,
            // which dominates the uncertainty here.
            let far = integral + em;
            let total = head + far;
            let uncertainty = em.abs() + 2.0 * s / ((n + 1.0) * tau) * total;
            Ok(TailBreakdown { total, head, mid: 0.0, far, uncertainty })
        }
        DistanceModel::ModifiedCusp { cache } => {
            let (cache_lo, cache_hi) = cache.n_range();
            if (n + 1.0) * tau < cache_lo {
                return Err(Error::Validation(format!(
                    "distance cache starts at displacement {cache_lo:e}, \
                     needed {:e}",
                    (n + 1.0) * tau
                )));
            }
            let mut m = (2 * n_trunc).max(8192);
            // Keep a wide quadrature range above the head.
            while (m as f64 + 1.0) * tau > 0.01 * cache_hi && m > 2 * n_trunc.max(1) {
                m /= 2;
            }
            if (m as f64 + 1.0) * tau > 0.5 * cache_hi {
                return Err(Error::Validation(format!(
                    "truncation {n_trunc} leaves no room in the cache range \
                     [{cache_lo:e}, {cache_hi:e}] for the tail quadrature"
                )));
            }
            let mut head = 0.0;
            for k in (n_trunc + 1)..=m {
                head += (-s * cache.d_full(k as f64 * tau)?).exp();
            }
            // Middle: (1/tau) int e^{-s d(u)} du over the cached range, in
            // t = log u, switching from the sum at the midpoint rule's
            // natural boundary (M + 1/2) with a first Euler-Maclaurin term.
            let a = (m as f64 + 0.5) * tau;
            let integrand = |t: f64| {
                let u = t.exp().clamp(cache_lo, cache_hi);
                cache.d_full(u).map_or(0.0, |d| (-s * d).exp() * u)
            };
            let scale = head.max((-s * cache.d_full(a)?).exp());
            let q = adaptive_simpson(&integrand, a.ln(), cache_hi.ln(), 1e-12 * scale.max(1e-12))?;
            let rel = 1e-4;
            let d_a = cache.d_full(a)?;
            let dprime = (cache.d_full(a * (1.0 + rel))? - cache.d_full(a * (1.0 - rel))?)
                / (2.0 * a * rel);
            let em = -(tau / 24.0) * s * dprime * (-s * d_a).exp();
            let mid = q.value / tau + em;
            let (far, far_unc) = modified_far_piece(data, cache, s, tau)?;
            let total = head + mid + far;
            let uncertainty = q.abs_error / tau + em.abs() + far_unc;
            Ok(TailBreakdown { total, head, mid, far, uncertainty })
        }
    }
}

/// Tail of `(1/tau) int e^{-s d(u)} du` beyond the cache range, by
/// continuing the distance curve analytically.
///
/// When the cusp profile is at hand the continuation is
/// `d(u) = 2(log u + alpha loglog u - log L(log u)) + eps(t)` with the
/// residual extrapolated along its slowly-decaying `(log t)^2 / t` shape,
/// anchored to the cache at the boundary; otherwise a two-point fit of
/// `2 log u + 2 a_eff loglog u + c` absorbs the residual. Both paths report
/// an allowance proportional to how much continuation freedom remains.
fn modified_far_piece(
    data: &SchottkyData,
    cache: &crate::clairaut::DistanceCache,
    s: f64,
    tau: f64,
) -> Result<(f64, f64)> {
    let (_, cache_hi) = cache.n_range();
    let t1 = cache_hi.ln();
    let d1 = cache.d_full(cache_hi)?;
    let t2 = t1 - 2.0;
    let d2 = cache.d_full(t2.exp())?;

    let (d_far, unc_rel): (Box<dyn Fn(f64) -> f64 + Sync>, f64) = match &data.cusp_profile {
        Some(p) if !p.is_hyperbolic_mode() => {
            let alpha = p.alpha();
            let l = p.l().clone();
            let d_asy = move |t: f64| 2.0 * (t + alpha * t.ln() - l.eval(t).ln());
            let e1 = d1 - d_asy(t1);
            let e2 = d2 - d_asy(t2);
            let qfit = e1 * t1 / t1.ln().powi(2);
            let predicted_e2 = qfit * t2.ln().powi(2) / t2;
            let shape_err = (predicted_e2 - e2).abs() / e2.abs().max(1e-9);
            let allowance = (0.15 + shape_err).min(0.6) * s * e1.abs();
            (
                Box::new(move |t: f64| d_asy(t) + qfit * t.ln().powi(2) / t),
                allowance,
            )
        }
        _ => {
            let a_eff = ((d1 - d2) - 2.0 * (t1 - t2)) / (2.0 * (t1.ln() - t2.ln()));
            let c_eff = d1 - 2.0 * t1 - 2.0 * a_eff * t1.ln();
            (Box::new(move |t: f64| 2.0 * t + 2.0 * a_eff * t.ln() + c_eff), 0.10 * s.max(0.5))
        }
    };
    // (1/tau) int_{t1}^inf e^{t - s d(t)} dt, flattened by t = t1 / y^2.
    let f = |y: f64| {
        let t = t1 / (y * y);
        let log_f = t - s * d_far(t) + (2.0 * t1).ln() - 3.0 * y.ln();
        log_f.exp()
    };
    let y_cut = 1e-4;
    let f1 = f(1.0);
    let q = adaptive_simpson(&f, y_cut, 1.0, 1e-11 * f1.max(1e-12))?;
    // Power-law remainder below the cut, estimated from the integrand itself.
    let f_cut = f(y_cut);
    let remainder = if f_cut > 0.0 {
        let p_hat = (f(2.0 * y_cut) / f_cut).ln() / std::f64::consts::LN_2;
        if p_hat <= -0.9 {
            return Err(Error::Numeric(
                "far tail integrand is not integrable near the cut; \
                 check summability of the parabolic series"
                    .into(),
            ));
        }
        f_cut * y_cut / (p_hat + 1.0)
    } else {
        0.0
    };
    let far = (q.value + remainder) / tau;
    let unc = (q.abs_error + remainder) / tau + unc_rel * far;
    Ok((far, unc))
}

// ---------------------------------------------------------------------------
// Operator assembly
// ---------------------------------------------------------------------------

/// Truncation handling for dropped letters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailMode {
    /// Drop letters past the cap.
    Raw,
    /// Add each parabolic factor's dropped tail as a rank-one stencil at its
    /// fixed point.
    Augmented,
}

/// Discretization parameters.
#[derive(Debug, Clone)]
pub struct OperatorParams {
    pub nodes_per_arc: usize,
    /// Letter cap per parabolic factor.
    pub trunc_parabolic: i64,
    /// Letter cap per hyperbolic factor.
    pub trunc_hyperbolic: i64,
    pub mode: TailMode,
    /// Multiplies the augmented tail stencils; used to probe how spectral
    /// output depends on the tail-mass uncertainty. Leave at 1 otherwise.
    pub tail_scale: f64,
}

impl Default for OperatorParams {
    fn default() -> Self {
        OperatorParams {
            nodes_per_arc: 128,
            trunc_parabolic: 512,
            trunc_hyperbolic: 96,
            mode: TailMode::Augmented,
            tail_scale: 1.0,
        }
    }
}

impl OperatorParams {
    pub fn with_nodes(mut self, n: usize) -> Self {
        self.nodes_per_arc = n;
        self
    }

    pub fn with_trunc(mut self, parabolic: i64, hyperbolic: i64) -> Self {
        self.trunc_parabolic = parabolic;
        self.trunc_hyperbolic = hyperbolic;
        self
    }

    pub fn with_mode(mut self, mode: TailMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn doubled_mesh(mut self) -> Self {
        self.nodes_per_arc *= 2;
        self
    }

    pub fn doubled_trunc(mut self) -> Self {
        self.trunc_parabolic *= 2;
        self.trunc_hyperbolic *= 2;
        self
    }
}

/// One assembled matrix entry: weight times a linear interpolation stencil.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    w: f64,
    frac: f64,
    left: u32,
}

/// Truncated transfer operator at one value of `s`, assembled row by row:
/// for each mesh slot, every admissible letter's weight and the stencil of
/// its pushforward point.
pub struct TransferOperator {
    pub s: f64,
    pub mesh: BoundaryMesh,
    pub params: OperatorParams,
    pub data: SchottkyData,
    pub model: DistanceModel,
    /// Per-factor one-sided tail breakdown (parabolic factors in augmented
    /// mode only).
    pub tails: Vec<Option<TailBreakdown>>,
    /// Sup over slots of the mass dropped (raw) or still uncertain
    /// (augmented) per application; the truncation diagnostic.
    pub tail_diagnostic_sup: f64,
    entries: Vec<Stencil>,
    row_ptr: Vec<usize>,
    /// Per parabolic factor: `e^{-s d(|n| tau)}` for `|n| = 1..=N` in the
    /// cusp-priced model (letter weights are this times the Gromov boost).
    exp_d: Vec<Option<Vec<f64>>>,
}

/// Single-letter (and word) weight `w_s = 1{indicator} e^{-s b~}`.
pub fn weight_w(
    data: &SchottkyData,
    model: &DistanceModel,
    s: f64,
    word: &Word,
    x: BoundaryPoint,
) -> Result<f64> {
    Ok(weight_w_with_image(data, model, s, word, x)?.0)
}

/// Weight together with the pushforward point `gamma x`.
///
/// The extended cocycle of a word is the sum of letter cocycles along the
/// action, so the weight is the product of letter weights; the indicator
/// only checks the last letter's factor (later letters act on points already
/// pushed inside the preceding factor's arcs).
pub fn weight_w_with_image(
    data: &SchottkyData,
    model: &DistanceModel,
    s: f64,
    word: &Word,
    x: BoundaryPoint,
) -> Result<(f64, BoundaryPoint)> {
    if !word.is_admissible() {
        return Err(Error::Validation(format!("inadmissible word {word}")));
    }
    if word.is_empty() {
        return Ok((1.0, x));
    }
    let last = *word.letters.last().expect("nonempty");
    if data.factor(last.factor).contains(x) {
        return Ok((0.0, x));
    }
    let mut point = x;
    let mut b_total = 0.0;
    for l in word.letters.iter().rev() {
        b_total += letter_cocycle_boundary(data, model, *l, point)?;
        point = l.generator(data).apply_boundary(point);
    }
    Ok(((-s * b_total).exp(), point))
}

impl TransferOperator {
    /// Assemble the discretized operator.
    pub fn assemble(
        data: &SchottkyData,
        model: &DistanceModel,
        s: f64,
        params: &OperatorParams,
    ) -> Result<TransferOperator> {
        if !(s >= 0.0) {
            return Err(Error::Validation(format!("need s >= 0, got {s}")));
        }
        if !(params.tail_scale > 0.0) {
            return Err(Error::Validation("tail_scale must be positive".into()));
        }
        if params.trunc_parabolic < 1 || params.trunc_hyperbolic < 1 {
            return Err(Error::Validation("letter truncations must be >= 1".into()));
        }
        let mesh = BoundaryMesh::build(data, params.nodes_per_arc)?;

        let mut tails: Vec<Option<TailBreakdown>> = vec![None; data.factors.len()];
        let mut exp_d: Vec<Option<Vec<f64>>> = vec![None; data.factors.len()];
        for (j, f) in data.factors.iter().enumerate() {
            if f.kind != FactorKind::Parabolic {
                continue;
            }
            if params.mode == TailMode::Augmented {
                tails[j] = Some(factor_tail_mass(data, model, j, s, params.trunc_parabolic)?);
            }
            if let DistanceModel::ModifiedCusp { cache } = model {
                let tau = parabolic_translation(data, j)?;
                let mut v = Vec::with_capacity(params.trunc_parabolic as usize);
                for n in 1..=params.trunc_parabolic {
                    v.push((-s * cache.d_full(n as f64 * tau)?).exp());
                }
                exp_d[j] = Some(v);
            }
        }

        let rows: Vec<Vec<Stencil>> = (0..mesh.len())
            .into_par_iter()
            .map(|i| build_row(data, model, s, params, &mesh, &tails, &exp_d, i))
            .collect::<Result<Vec<_>>>()?;

        let mut row_ptr = Vec::with_capacity(mesh.len() + 1);
        row_ptr.push(0usize);
        let mut entries = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        for row in rows {
            entries.extend_from_slice(&row);
            row_ptr.push(entries.len());
        }

        let mut op = TransferOperator {
            s,
            mesh,
            params: params.clone(),
            data: data.clone(),
            model: model.clone(),
            tails,
            tail_diagnostic_sup: 0.0,
            entries,
            row_ptr,
            exp_d,
        };
        op.tail_diagnostic_sup = op.truncation_diagnostic()?;
        Ok(op)
    }

    /// Apply the operator to a mesh function.
    pub fn apply(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let n = self.mesh.len();
        if phi.len() != n {
            return Err(Error::Validation(format!(
                "operator on {n} slots applied to {} values",
                phi.len()
            )));
        }
        Ok((0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for st in &self.entries[self.row_ptr[i]..self.row_ptr[i + 1]] {
                    let l = st.left as usize;
                    acc += st.w * ((1.0 - st.frac) * phi[l] + st.frac * phi[l + 1]);
                }
                acc
            })
            .collect())
    }

    /// Sup over slots of the per-application mass unaccounted for by the
    /// assembled rows: dropped letters in raw mode, tail-mass uncertainty
    /// plus dropped hyperbolic letters in augmented mode.
    fn truncation_diagnostic(&self) -> Result<f64> {
        let mut sup: f64 = 0.0;
        for i in 0..self.mesh.len() {
            let x = self.mesh.points[i];
            let own = self.mesh.owner[i];
            let mut slot = 0.0;
            for (j, f) in self.data.factors.iter().enumerate() {
                if own == Some(j) {
                    continue;
                }
                match f.kind {
                    FactorKind::Parabolic => {
                        let xp = f.fixed_points[0];
                        let boost = (2.0 * self.s * gromov(xp, x, self.data.base)?).exp();
                        match (&self.tails[j], self.params.mode) {
                            (Some(tb), TailMode::Augmented) => {
                                slot += 2.0 * tb.uncertainty * boost;
                            }
                            _ => {
                                // Raw mode: bound the dropped mass if it is
                                // finite at this s, otherwise report infinity.
                                match factor_tail_mass(
                                    &self.data,
                                    &self.model,
                                    j,
                                    self.s,
                                    self.params.trunc_parabolic,
                                ) {
                                    Ok(tb) => slot += 2.0 * (tb.total + tb.uncertainty) * boost,
                                    Err(_) => slot = f64::INFINITY,
                                }
                            }
                        }
                    }
                    FactorKind::Hyperbolic => {
                        slot += self.hyperbolic_tail_bound(j, x)?;
                    }
                }
            }
            sup = sup.max(slot);
        }
        Ok(sup)
    }

    /// Geometric bound on the dropped hyperbolic letters of factor `j` at `x`.
    fn hyperbolic_tail_bound(&self, j: usize, x: BoundaryPoint) -> Result<f64> {
        let f = self.data.factor(j);
        let n = self.params.trunc_hyperbolic;
        let t = (f.generator.a + f.generator.d).abs();
        if t <= 2.0 {
            return Err(Error::Validation(format!("factor {j} generator is not hyperbolic")));
        }
        let mu = 0.5 * (t + (t * t - 4.0).sqrt());
        let r = mu.powf(-2.0 * self.s);
        if r >= 1.0 {
            // s = 0 formal mode: infinitely many unit weights.
            return Ok(f64::INFINITY);
        }
        let mut last = 0.0;
        for sign in [n, -n] {
            let letter = Letter::new(j, sign)?;
            last += (-self.s * letter_cocycle_boundary(&self.data, &self.model, letter, x)?).exp();
        }
        Ok(last * r / (1.0 - r))
    }

    /// Direct single-letter sum `(L_s 1)(x)` recomputed away from the
    /// assembled rows (cross-check path).
    pub fn one_letter_sum_direct(&self, x: BoundaryPoint) -> Result<f64> {
        let mut acc = 0.0;
        for (j, f) in self.data.factors.iter().enumerate() {
            if f.contains(x) {
                continue;
            }
            let cap = match f.kind {
                FactorKind::Parabolic => self.params.trunc_parabolic,
                FactorKind::Hyperbolic => self.params.trunc_hyperbolic,
            };
            for n in 1..=cap {
                for sign in [n, -n] {
                    let w = Word::from_letters(vec![Letter::new(j, sign)?])?;
                    acc += weight_w(&self.data, &self.model, self.s, &w, x)?;
                }
            }
            if f.kind == FactorKind::Parabolic {
                if let (Some(tb), TailMode::Augmented) = (&self.tails[j], self.params.mode) {
                    let xp = f.fixed_points[0];
                    let boost = (2.0 * self.s * gromov(xp, x, self.data.base)?).exp();
                    acc += 2.0 * tb.total * self.params.tail_scale * boost;
                }
            }
        }
        Ok(acc)
    }
}

#[allow(clippy::too_many_arguments)]
fn build_row(
    data: &SchottkyData,
    model: &DistanceModel,
    s: f64,
    params: &OperatorParams,
    mesh: &BoundaryMesh,
    tails: &[Option<TailBreakdown>],
    exp_d: &[Option<Vec<f64>>],
    slot: usize,
) -> Result<Vec<Stencil>> {
    let x = mesh.points[slot];
    let own = mesh.owner[slot];
    let mut row = Vec::new();
    for (j, f) in data.factors.iter().enumerate() {
        if own == Some(j) {
            continue;
        }
        let cap = match f.kind {
            FactorKind::Parabolic => params.trunc_parabolic,
            FactorKind::Hyperbolic => params.trunc_hyperbolic,
        };
        let cusp_priced = matches!(model, DistanceModel::ModifiedCusp { .. })
            && f.kind == FactorKind::Parabolic;
        if cusp_priced {
            let xp = f.fixed_points[0];
            let boost = (2.0 * s * gromov(xp, x, data.base)?).exp();
            let table = exp_d[j].as_ref().expect("cusp-priced factor has a weight table");
            let mut g_pos = f.generator;
            let mut g_neg = f.generator.inverse();
            let step_pos = f.generator;
            let step_neg = g_neg;
            for n in 1..=cap {
                let w = table[(n - 1) as usize] * boost;
                for g in [&g_pos, &g_neg] {
                    let y = g.apply_boundary(x);
                    let (left, frac) = mesh.locate(j, y)?;
                    row.push(Stencil { w, frac, left: left as u32 });
                }
                if n < cap {
                    g_pos = step_pos.compose(&g_pos);
                    g_neg = step_neg.compose(&g_neg);
                }
            }
            if let (Some(tb), TailMode::Augmented) = (&tails[j], params.mode) {
                let (left, frac) = mesh.locate(j, xp)?;
                row.push(Stencil {
                    w: 2.0 * tb.total * params.tail_scale * boost,
                    frac,
                    left: left as u32,
                });
            }
        } else {
            for n in 1..=cap {
                for sign in [n, -n] {
                    let letter = Letter::new(j, sign)?;
                    let b = letter_cocycle_boundary(data, model, letter, x)?;
                    let y = letter.generator(data).apply_boundary(x);
                    let (left, frac) = mesh.locate(j, y)?;
                    row.push(Stencil { w: (-s * b).exp(), frac, left: left as u32 });
                }
            }
            if f.kind == FactorKind::Parabolic {
                if let (Some(tb), TailMode::Augmented) = (&tails[j], params.mode) {
                    let xp = f.fixed_points[0];
                    let boost = (2.0 * s * gromov(xp, x, data.base)?).exp();
                    let (left, frac) = mesh.locate(j, xp)?;
                    row.push(Stencil {
                        w: 2.0 * tb.total * params.tail_scale * boost,
                        frac,
                        left: left as u32,
                    });
                }
            }
        }
    }
    Ok(row)
}

// ---------------------------------------------------------------------------
// Spectral data
// ---------------------------------------------------------------------------

/// Output of the power iteration.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub rho: f64,
    /// Positive eigenfunction, sup-normalized to 1.
    pub h: Vec<f64>,
    /// Number of operator applications.
    pub iters: usize,
    /// Collatz-Wielandt bracket on `rho` at the final iterate.
    pub rho_bracket: (f64, f64),
    /// min(h)/max(h) over all slots.
    pub positivity_ratio: f64,
    /// Period of the peripheral spectrum handled by the iteration
    /// (2 for two-factor products, else 1).
    pub peripheral_period: usize,
    /// Sup-norm eigen-residual `|L h - rho h| / rho` after reconstruction.
    pub residual: f64,
}

/// Power iteration with Collatz-Wielandt bracketing.
///
/// Two-factor products are bipartite, so the peripheral spectrum is the pair
/// `{rho, -rho}` and plain iteration oscillates; iterating the two-step
/// operator removes the oscillation, and the eigenfunction of the one-step
/// operator is reconstructed from one extra application. The bracket
/// `min_i (L^p v)_i / v_i <= rho^p <= max_i (L^p v)_i / v_i` holds for every
/// positive iterate of a nonnegative matrix, so its width is an honest
/// convergence measure (the isolated base slot, whose column is zero, is
/// excluded).
pub fn spectral_radius(op: &TransferOperator) -> Result<SpectralData> {
    let n = op.mesh.len();
    let x0i = op.mesh.x0_index();
    let period = if op.data.factors.len() == 2 { 2usize } else { 1 };
    let cap = 10_000usize;
    let tol = 1e-10;

    let mut v = vec![1.0f64; n];
    let mut iters = 0usize;
    let (rho_p, bracket) = loop {
        let w = if period == 2 {
            let mid = op.apply(&v)?;
            iters += 2;
            op.apply(&mid)?
        } else {
            iters += 1;
            op.apply(&v)?
        };
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..n {
            if i == x0i {
                continue;
            }
            let r = w[i] / v[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(Error::Numeric(format!(
                "power iteration degenerated (ratio bracket [{lo}, {hi}]); \
                 weights may underflow at s = {}",
                op.s
            )));
        }
        if hi - lo <= tol * hi {
            break (0.5 * (lo + hi), (lo, hi));
        }
        if iters >= cap {
            return Err(Error::Numeric(format!(
                "power iteration did not converge in {cap} applications \
                 (bracket [{lo}, {hi}]); the mesh is too coarse for this operator"
            )));
        }
        let sup = v
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != x0i)
            .map(|(_, &x)| x)
            .fold(0.0f64, |a, b| a.max(b));
        for (i, t) in w.iter().enumerate() {
            if i != x0i {
                v[i] = t / sup.max(1e-300);
            }
        }
    };

    let rho = rho_p.powf(1.0 / period as f64);
    // Reconstruct the one-step eigenfunction. For the bipartite case the
    // two-step limit fixes each factor block only up to scale; applying L
    // once ties the second block to the first.
    let mut h = v.clone();
    if period == 2 {
        let lv = op.apply(&v)?;
        iters += 1;
        for i in 0..n {
            if op.mesh.owner[i] == Some(1) {
                h[i] = lv[i] / rho;
            }
        }
    }
    let lh = op.apply(&h)?;
    iters += 1;
    h[x0i] = lh[x0i] / rho;
    let lh = op.apply(&h)?;
    iters += 1;
    let mut residual = 0.0f64;
    for i in 0..n {
        residual = residual.max((lh[i] - rho * h[i]).abs());
    }
    let sup = h.iter().fold(0.0f64, |a, &b| a.max(b));
    residual /= rho * sup;
    if residual > 1e-6 {
        return Err(Error::Numeric(format!(
            "eigenfunction reconstruction left residual {residual:e}; \
             the peripheral structure is not the expected period-{period} one"
        )));
    }
    let mut minh = f64::INFINITY;
    for x in &mut h {
        *x /= sup;
        minh = minh.min(*x);
    }
    if !(minh > 0.0) {
        return Err(Error::Numeric("eigenfunction lost positivity".into()));
    }
    Ok(SpectralData {
        rho,
        h,
        iters,
        rho_bracket: (bracket.0.powf(1.0 / period as f64), bracket.1.powf(1.0 / period as f64)),
        positivity_ratio: minh,
        peripheral_period: period,
        residual,
    })
}

// ---------------------------------------------------------------------------
// Doob normalization
// ---------------------------------------------------------------------------

impl TransferOperator {
    /// Apply the Doob-normalized operator `P psi = L(h psi) / (rho h)`.
    pub fn doob_apply(&self, sd: &SpectralData, psi: &[f64]) -> Result<Vec<f64>> {
        let hp: Vec<f64> = sd.h.iter().zip(psi).map(|(a, b)| a * b).collect();
        let mut out = self.apply(&hp)?;
        for (o, h) in out.iter_mut().zip(&sd.h) {
            *o /= sd.rho * h;
        }
        Ok(out)
    }
}

/// Markov word weight `p_s(gamma, x) = rho^{-k} h(gamma x) w_s(gamma, x) / h(x)`.
pub fn doob_weight(
    op: &TransferOperator,
    sd: &SpectralData,
    word: &Word,
    x: BoundaryPoint,
) -> Result<f64> {
    let hx = op.mesh.eval(&sd.h, x)?;
    if hx < H_FLOOR {
        return Err(Error::Numeric(format!(
            "eigenfunction value {hx:e} at {x} is below the positivity floor"
        )));
    }
    if word.is_empty() {
        return Ok(1.0);
    }
    let (w, image) = weight_w_with_image(&op.data, &op.model, op.s, word, x)?;
    if w == 0.0 {
        return Ok(0.0);
    }
    let h_img = op.mesh.eval(&sd.h, image)?;
    Ok(w * h_img / (sd.rho.powi(word.len() as i32) * hx))
}

/// Level-`k` Doob sum and its truncation allowance at one mesh slot.
#[derive(Debug, Clone, Copy)]
pub struct LevelSumReport {
    pub k: usize,
    pub sum: f64,
    /// Estimated mass of the dropped (beyond-truncation) words at this level.
    pub tail: f64,
}

/// Direct sums `sum_{gamma in Gamma(k), |exponents| <= N} p_s(gamma, x)` for
/// `k = 1..=k_max`, with per-level truncation-tail estimates.
///
/// The word sums are computed by depth-first search over admissible letter
/// chains with the eigenfunction interpolated at the final image only, so
/// they are the honest Markov-normalization check rather than a matrix
/// identity. The tail estimate propagates the one-level dropped mass through
/// the Doob matrix.
pub fn doob_level_sums(
    op: &TransferOperator,
    sd: &SpectralData,
    slot: usize,
    k_max: usize,
) -> Result<Vec<LevelSumReport>> {
    if k_max < 1 || k_max > 4 {
        return Err(Error::Validation(format!("level sums support 1 <= k <= 4, got {k_max}")));
    }
    let x = op.mesh.points[slot];
    let hx = sd.h[slot];
    if hx < H_FLOOR {
        return Err(Error::Numeric("eigenfunction below positivity floor at slot".into()));
    }

    // First letters, in deterministic order.
    let mut firsts: Vec<Letter> = Vec::new();
    for (j, f) in op.data.factors.iter().enumerate() {
        if f.contains(x) {
            continue;
        }
        let cap = match f.kind {
            FactorKind::Parabolic => op.params.trunc_parabolic,
            FactorKind::Hyperbolic => op.params.trunc_hyperbolic,
        };
        for n in 1..=cap {
            firsts.push(Letter::new(j, n)?);
            firsts.push(Letter::new(j, -n)?);
        }
    }

    let partials: Vec<Result<Vec<f64>>> = firsts
        .par_iter()
        .map(|&a| {
            let mut c = vec![0.0f64; k_max];
            let w1 = letter_weight(op, a, x)?;
            let y1 = a.generator(&op.data).apply_boundary(x);
            c[0] += w1 * op.mesh.eval(&sd.h, y1)?;
            if k_max > 1 {
                visit_chains(op, sd, y1, w1, 1, &mut c)?;
            }
            Ok(c)
        })
        .collect();
    let mut sums = vec![0.0f64; k_max];
    for p in partials {
        let c = p?;
        for (s_k, v) in sums.iter_mut().zip(c) {
            *s_k += v;
        }
    }

    // Truncation tail: mass of matrix chains that hit an augmented tail
    // stencil, counted once at the step where they do,
    // `D_k = sum_{l < k} (H^l t1)` with `H` the head-only Doob matrix.
    // `H phi` is the full Doob application minus the rank-one stencil terms.
    let per_factor = one_level_tail_per_factor(op, sd)?;
    let mut t1 = vec![0.0f64; op.mesh.len()];
    for (_, tj) in &per_factor {
        for (a, t) in t1.iter_mut().zip(tj) {
            *a += t;
        }
    }
    let mut cur = t1.clone();
    let mut tail_acc = t1;
    let mut reports = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        reports.push(LevelSumReport {
            k,
            sum: sums[k - 1] / (sd.rho.powi(k as i32) * hx),
            tail: tail_acc[slot],
        });
        if k < k_max {
            let mut next = op.doob_apply(sd, &cur)?;
            for (xp, tj) in &per_factor {
                let at_p = op.mesh.eval(&cur, *xp)?;
                for (n, t) in next.iter_mut().zip(tj) {
                    *n -= t * at_p;
                }
            }
            cur = next;
            for (a, c) in tail_acc.iter_mut().zip(&cur) {
                *a += c;
            }
        }
    }
    Ok(reports)
}

/// Single-letter weight at a boundary point (no indicator: callers guarantee
/// admissibility).
fn letter_weight(op: &TransferOperator, a: Letter, x: BoundaryPoint) -> Result<f64> {
    Ok((-op.s * letter_cocycle_boundary(&op.data, &op.model, a, x)?).exp())
}

/// Depth-first chain sums: at each node, close chains of the next length via
/// a vectorized one-level sweep, then descend while the depth budget allows.
fn visit_chains(
    op: &TransferOperator,
    sd: &SpectralData,
    y: BoundaryPoint,
    w: f64,
    depth: usize,
    contrib: &mut [f64],
) -> Result<()> {
    let k_max = contrib.len();
    for (j, f) in op.data.factors.iter().enumerate() {
        if f.contains(y) {
            continue;
        }
        contrib[depth] += w * one_level_weighted_sum(op, sd, j, y)?;
        if depth + 1 < k_max {
            let cap = match f.kind {
                FactorKind::Parabolic => op.params.trunc_parabolic,
                FactorKind::Hyperbolic => op.params.trunc_hyperbolic,
            };
            for n in 1..=cap {
                for sign in [n, -n] {
                    let a = Letter::new(j, sign)?;
                    let wa = letter_weight(op, a, y)?;
                    let ya = a.generator(&op.data).apply_boundary(y);
                    visit_chains(op, sd, ya, w * wa, depth + 1, contrib)?;
                }
            }
        }
    }
    Ok(())
}

/// `sum_{letters a of factor j} w_s(a, y) h(a y)` with the factor's weight
/// table when available.
fn one_level_weighted_sum(
    op: &TransferOperator,
    sd: &SpectralData,
    j: usize,
    y: BoundaryPoint,
) -> Result<f64> {
    let f = op.data.factor(j);
    let cap = match f.kind {
        FactorKind::Parabolic => op.params.trunc_parabolic,
        FactorKind::Hyperbolic => op.params.trunc_hyperbolic,
    };
    let mut acc = 0.0;
    if let Some(table) = &op.exp_d[j] {
        let xp = f.fixed_points[0];
        let boost = (2.0 * op.s * gromov(xp, y, op.data.base)?).exp();
        let mut g_pos = f.generator;
        let mut g_neg = f.generator.inverse();
        let step_pos = f.generator;
        let step_neg = g_neg;
        for n in 1..=cap {
            let w = table[(n - 1) as usize] * boost;
            for g in [&g_pos, &g_neg] {
                let img = g.apply_boundary(y);
                let (left, frac) = op.mesh.locate(j, img)?;
                acc += w * ((1.0 - frac) * sd.h[left] + frac * sd.h[left + 1]);
            }
            if n < cap {
                g_pos = step_pos.compose(&g_pos);
                g_neg = step_neg.compose(&g_neg);
            }
        }
    } else {
        for n in 1..=cap {
            for sign in [n, -n] {
                let a = Letter::new(j, sign)?;
                let w = letter_weight(op, a, y)?;
                let img = a.generator(&op.data).apply_boundary(y);
                let (left, frac) = op.mesh.locate(j, img)?;
                acc += w * ((1.0 - frac) * sd.h[left] + frac * sd.h[left + 1]);
            }
        }
    }
    Ok(acc)
}

/// Per parabolic factor, the one-level Doob mass of its augmented tail
/// stencil (`t1_j(x) = 2 S_j h(x_P) boost_j(x) / (rho h(x))`, zero at slots
/// the factor cannot act on), together with the stencil's anchor point.
///
/// In raw mode the assembled matrix consists of the in-truncation letters
/// alone, so the chain sums hit every matrix entry and this is empty (how
/// much the matrix itself misses of the full operator is the separate
/// `tail_diagnostic_sup`).
fn one_level_tail_per_factor(
    op: &TransferOperator,
    sd: &SpectralData,
) -> Result<Vec<(BoundaryPoint, Vec<f64>)>> {
    let n = op.mesh.len();
    let mut out = Vec::new();
    if op.params.mode != TailMode::Augmented {
        return Ok(out);
    }
    for (j, f) in op.data.factors.iter().enumerate() {
        let tb = match (&op.tails[j], f.kind) {
            (Some(tb), FactorKind::Parabolic) => tb,
            _ => continue,
        };
        let xp = f.fixed_points[0];
        let h_xp = op.mesh.eval(&sd.h, xp)?;
        let mut tj = vec![0.0f64; n];
        for i in 0..n {
            if op.mesh.owner[i] == Some(j) {
                continue;
            }
            let boost = (2.0 * op.s * gromov(xp, op.mesh.points[i], op.data.base)?).exp();
            tj[i] =
                2.0 * tb.total * op.params.tail_scale * boost * h_xp / (sd.rho * sd.h[i]);
        }
        out.push((xp, tj));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Criticality and classification
// ---------------------------------------------------------------------------

/// Largest critical exponent of the elementary factors: 1/2 when any factor
/// is parabolic (the cusp pricing keeps the exponent of the cyclic parabolic
/// subgroup at 1/2), else 0 for purely hyperbolic cyclic factors.
pub fn factor_exponent_floor(data: &SchottkyData) -> f64 {
    if data.factors.iter().any(|f| f.kind == FactorKind::Parabolic) {
        0.5
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalBranch {
    /// `rho` at the factor exponent is >= 1 and the group exponent sits
    /// strictly above it, located by bisection of `rho_s = 1`.
    CriticalGap,
    /// `rho` at the factor exponent is < 1: the group exponent equals the
    /// factor exponent.
    Exotic,
}

#[derive(Debug, Clone)]
pub struct CriticalReport {
    pub delta_gamma: f64,
    pub branch: CriticalBranch,
    /// Spectral radius at the factor exponent floor (infinite when the full
    /// letter series diverges there).
    pub rho_at_floor: f64,
    /// Final bisection bracket width (0 for the exotic branch).
    pub bisection_width: f64,
    /// Number of spectral-radius evaluations.
    pub evaluations: usize,
}

/// Locate the group's critical exponent from the spectral-radius curve:
/// `delta_Gamma = inf { s >= floor : rho_s <= 1 }`.
pub fn critical_exponent(
    data: &SchottkyData,
    model: &DistanceModel,
    params: &OperatorParams,
    delta_floor: f64,
    s_hi: f64,
) -> Result<CriticalReport> {
    let mut evals = 0usize;
    let mut rho_at = |s: f64| -> Result<f64> {
        if parabolic_series_diverges(data, model, s) {
            return Ok(f64::INFINITY);
        }
        evals += 1;
        let op = TransferOperator::assemble(data, model, s, params)?;
        Ok(spectral_radius(&op)?.rho)
    };

    let rho_floor = rho_at(delta_floor)?;
    if rho_floor < 1.0 {
        return Ok(CriticalReport {
            delta_gamma: delta_floor,
            branch: CriticalBranch::Exotic,
            rho_at_floor: rho_floor,
            bisection_width: 0.0,
            evaluations: evals,
        });
    }

    let mut lo = delta_floor;
    let mut step = 0.25;
    let mut hi = delta_floor + step;
    loop {
        if hi > s_hi {
            return Err(Error::Validation(format!(
                "spectral radius stays >= 1 up to s = {s_hi}; raise the cap"
            )));
        }
        if rho_at(hi)? < 1.0 {
            break;
        }
        lo = hi;
        step *= 2.0;
        hi = delta_floor + step;
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let r = rho_at(mid)?;
        if (r - 1.0).abs() < 1e-8 || hi - lo < 1e-13 {
            return Ok(CriticalReport {
                delta_gamma: mid,
                branch: CriticalBranch::CriticalGap,
                rho_at_floor: rho_floor,
                bisection_width: hi - lo,
                evaluations: evals,
            });
        }
        if r >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Convergent,
    Divergent,
    Undetermined,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Convergent => write!(f, "convergent"),
            Verdict::Divergent => write!(f, "divergent"),
            Verdict::Undetermined => write!(f, "undetermined"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifyReport {
    pub verdict: Verdict,
    pub s: f64,
    /// Refinement-corrected spectral radius.
    pub rho: f64,
    pub rho_base: f64,
    pub rho_trunc_doubled: f64,
    pub rho_mesh_doubled: f64,
    /// Refinement increments plus the tail-mass sensitivity band.
    pub uncertainty: f64,
    pub margin: f64,
}

/// Three-valued convergence verdict from the sign of `rho_s - 1` at the
/// factor exponent, after truncation and mesh refinement.
pub fn classify(
    data: &SchottkyData,
    model: &DistanceModel,
    params: &OperatorParams,
    s: f64,
    margin: f64,
) -> Result<ClassifyReport> {
    if parabolic_series_diverges(data, model, s) {
        // Truncated radii grow without bound; the Poincare-type series
        // diverges no matter the discretization.
        return Ok(ClassifyReport {
            verdict: Verdict::Divergent,
            s,
            rho: f64::INFINITY,
            rho_base: f64::INFINITY,
            rho_trunc_doubled: f64::INFINITY,
            rho_mesh_doubled: f64::INFINITY,
            uncertainty: 0.0,
            margin,
        });
    }
    let solve = |p: &OperatorParams| -> Result<(f64, f64)> {
        let op = TransferOperator::assemble(data, model, s, p)?;
        let sd = spectral_radius(&op)?;
        // Tail-mass sensitivity: rescale the augmented tail stencils by the
        // relative uncertainty of the tail computation and resolve.
        let mut band = 0.0;
        if p.mode == TailMode::Augmented {
            let rel = op
                .tails
                .iter()
                .flatten()
                .map(|tb| tb.uncertainty / tb.total.max(1e-300))
                .fold(0.0f64, f64::max);
            if rel > 1e-12 {
                let mut scaled = p.clone();
                scaled.tail_scale = 1.0 + rel;
                let op_hi = TransferOperator::assemble(data, model, s, &scaled)?;
                band = (spectral_radius(&op_hi)?.rho - sd.rho).abs();
            }
        }
        Ok((sd.rho, band))
    };
    let (rho_base, band) = solve(params)?;
    let (rho_trunc, _) = solve(&params.clone().doubled_trunc())?;
    let (rho_mesh, _) = solve(&params.clone().doubled_mesh())?;
    let rho = rho_base + (rho_trunc - rho_base) + (rho_mesh - rho_base);
    let uncertainty = (rho_trunc - rho_base).abs() + (rho_mesh - rho_base).abs() + band;
    let guard = margin.max(uncertainty);
    let verdict = if rho < 1.0 - guard {
        Verdict::Convergent
    } else if rho > 1.0 + guard {
        Verdict::Divergent
    } else {
        Verdict::Undetermined
    };
    Ok(ClassifyReport {
        verdict,
        s,
        rho,
        rho_base,
        rho_trunc_doubled: rho_trunc,
        rho_mesh_doubled: rho_mesh,
        uncertainty,
        margin,
    })
}

/// Spectral radius sampled on a grid of `s` values (the rho-vs-s curve).
pub fn rho_curve(
    data: &SchottkyData,
    model: &DistanceModel,
    params: &OperatorParams,
    s_values: &[f64],
) -> Result<Vec<(f64, f64)>> {
    s_values
        .iter()
        .map(|&s| {
            let op = TransferOperator::assemble(data, model, s, params)?;
            Ok((s, spectral_radius(&op)?.rho))
        })
        .collect()
}

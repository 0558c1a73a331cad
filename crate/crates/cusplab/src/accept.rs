//! Built-in acceptance suite.
//!
//! Thirteen numbered criteria, each pinned to a closed-form oracle, a
//! frozen constant, or a trend the asymptotic theory dictates. Every
//! criterion reports one pass/fail line with the measured numbers; a
//! failure is reported, never patched over, so a red line is a statement
//! about the implementation (or about the attainability of the criterion at
//! desk scale), not a loose tolerance.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clairaut::{
    anchor_integrals, distance_for_n, envelope_check, factor_tail, DistanceCache,
};
use crate::coding::{
    calibrate_prune, enumerate_ball, enumerate_ball_reference, telescoped_distance, word_distance,
    BallParams, DistanceModel, Letter, Word,
};
use crate::counting::{
    brute_count, count_csv, factor_tail_plateau, level_constant_cj, renewal_m, OrbitalContext,
    PointSpec, TestFunction,
};
use crate::error::Result;
use crate::hyperbolic::{BoundaryPoint, SchottkyData};
use crate::profile::{CuspProfile, ProfileParams};
use crate::svf::SlowlyVaryingSpec;
use crate::transfer::{
    doob_level_sums, spectral_radius, OperatorParams, SpectralData, TransferOperator,
};

#[derive(Debug, Clone)]
pub struct CriterionOutcome {
    pub id: &'static str,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub outcomes: Vec<CriterionOutcome>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failed_ids(&self) -> Vec<&'static str> {
        self.outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect()
    }

    /// One line per criterion.
    pub fn lines(&self) -> Vec<String> {
        self.outcomes
            .iter()
            .map(|o| {
                format!(
                    "{:<4}{} ({:>6.1}s)  {}: {}",
                    o.id,
                    if o.passed { "PASS" } else { "FAIL" },
                    o.seconds,
                    o.title,
                    o.detail
                )
            })
            .collect()
    }
}

fn run<F>(out: &mut Vec<CriterionOutcome>, id: &'static str, title: &'static str, f: F)
where
    F: FnOnce() -> Result<(bool, String)>,
{
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(x) => x,
        Err(e) => (false, format!("errored: {e}")),
    };
    out.push(CriterionOutcome { id, title, passed, detail, seconds: t.elapsed().as_secs_f64() });
}

/// The canonical experiment profile: alpha = 3/2, L = 1, pinch 0.2..2.0,
/// glue at 8.
fn canonical_profile() -> Result<CuspProfile> {
    CuspProfile::build_with(ProfileParams {
        glue_guess: Some(8.0),
        ..ProfileParams::new(1.5, SlowlyVaryingSpec::constant(1.0), 0.2, 2.0)
    })
}

/// Everything the instance-level criteria share.
struct SharedLab {
    profile: CuspProfile,
    l1: SlowlyVaryingSpec,
    cache: DistanceCache,
    data: SchottkyData,
    model: DistanceModel,
    op: TransferOperator,
    sd: SpectralData,
    exact_data: SchottkyData,
    c_prune_exact: f64,
    c_prune_mod: f64,
}

impl SharedLab {
    fn build() -> Result<SharedLab> {
        let profile = canonical_profile()?;
        let l1 = SlowlyVaryingSpec::constant(1.0);
        let cache = DistanceCache::build(&profile, 1.0, 1e9, 600)?;
        let data = SchottkyData::two_factor_family(3.4, 5.0, 1, Some(profile.clone()))?;
        let model = DistanceModel::ModifiedCusp { cache: cache.clone() };
        let params = OperatorParams::default();
        let op = TransferOperator::assemble(&data, &model, 0.5, &params)?;
        let sd = spectral_radius(&op)?;
        let exact_data = SchottkyData::two_factor_family(3.4, 5.0, 1, None)?;
        let c_prune_exact = calibrate_prune(&exact_data, &DistanceModel::ExactH2, 7, 400, 5, 24)?;
        let c_prune_mod = calibrate_prune(&data, &model, 11, 400, 5, 24)?;
        Ok(SharedLab {
            profile,
            l1,
            cache,
            data,
            model,
            op,
            sd,
            exact_data,
            c_prune_exact,
            c_prune_mod,
        })
    }
}

fn one(_: BoundaryPoint) -> Result<f64> {
    Ok(1.0)
}

fn unit_hat() -> Result<TestFunction> {
    TestFunction::from_breakpoints(vec![(-2.0, 0.0), (-1.0, 1.0), (0.0, 0.0)])
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

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

fn a1() -> Result<(bool, String)> {
    let p = CuspProfile::hyperbolic();
    let mut worst = 0.0f64;
    for n in [1.0, 2.0, 5.0, 10.0, 100.0] {
        let g = distance_for_n(&p, n)?;
        let oracle = (1.0 + n * n / 2.0).acosh();
        worst = worst.max((g.d_full - oracle).abs());
    }
    Ok((worst <= 1e-6, format!("max |d_full - arccosh(1+n^2/2)| = {worst:.2e} (tol 1e-6)")))
}

fn a2() -> Result<(bool, String)> {
    let (i1, i2) = anchor_integrals()?;
    let e1 = (i1 - 1.0).abs();
    let e2 = (i2 - std::f64::consts::LN_2).abs();
    Ok((
        e1 <= 1e-8 && e2 <= 1e-8,
        format!("|I1 - 1| = {e1:.2e}, |I2 - log 2| = {e2:.2e} (tol 1e-8)"),
    ))
}

fn a3(lab: &SharedLab) -> Result<(bool, String)> {
    let mut residuals = Vec::new();
    for k in 3..=7 {
        let n = 10f64.powi(k);
        let g = distance_for_n(&lab.profile, n)?;
        residuals.push((g.d_full - 2.0 * (n.ln() + 1.5 * n.ln().ln())).abs());
    }
    let decreasing = residuals.windows(2).all(|w| w[1] < w[0]);
    let final_ok = residuals[4] <= 0.1;
    let seq: Vec<String> = residuals.iter().map(|r| format!("{r:.3}")).collect();
    Ok((
        decreasing && final_ok,
        format!(
            "residuals at n = 1e3..1e7: [{}]; strictly decreasing: {decreasing}; \
             final {:.3} <= 0.1: {final_ok}",
            seq.join(", "),
            residuals[4]
        ),
    ))
}

fn a4(lab: &SharedLab) -> Result<(bool, String)> {
    let ns: Vec<f64> = (0..20).map(|i| 10f64.powf(3.0 + 4.0 * i as f64 / 19.0)).collect();
    let rep = envelope_check(&lab.profile, &ns, 1000)?;
    match rep.first_violation {
        None => Ok((true, format!("f_n(s) <= e^(-s/2) on {} grid points", rep.checked))),
        Some((n, s, f, bound)) => Ok((
            false,
            format!("violated at n = {n:.3e}, s = {s:.3}: f = {f:.6} > bound {bound:.6}"),
        )),
    }
}

fn a5(lab: &SharedLab) -> Result<(bool, String)> {
    // Integer displacements (tau = 1) of the canonical profile; the window
    // at R = 30 sits well inside a cache over n <= 1e6.
    let cache = DistanceCache::build(&lab.profile, 1.0, 1e6, 400)?;
    let pts = factor_tail(1.5, &lab.l1, &cache, 0.5, 1.0, &[30.0])?;
    let target = 2f64.powf(0.5);
    let ratio = pts[0].scaled / target;
    Ok((
        (ratio - 1.0).abs() <= 0.25,
        format!(
            "scaled window sum at R = 30 is {:.4} over {} terms; ratio {ratio:.3} of 2^(alpha-1) \
             (band 0.75..1.25)",
            pts[0].scaled, pts[0].terms
        ),
    ))
}

fn a6(lab: &SharedLab) -> Result<(bool, String)> {
    let model = DistanceModel::ExactH2;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=8usize);
        let mut factor = rng.gen_range(0..2usize);
        let mut letters = Vec::with_capacity(len);
        for _ in 0..len {
            let mut e = 0i64;
            while e == 0 {
                e = rng.gen_range(-6..=6i64);
            }
            letters.push(Letter::new(factor, e)?);
            factor = 1 - factor;
        }
        let word = Word::from_letters(letters)?;
        let direct = word_distance(&lab.exact_data, &model, &word)?;
        let telescoped = telescoped_distance(&lab.exact_data, &model, &word)?;
        worst = worst.max((direct - telescoped).abs());
    }
    Ok((worst <= 1e-9, format!("max |composed - telescoped| = {worst:.2e} over 1000 words (tol 1e-9)")))
}

fn a7(lab: &SharedLab) -> Result<(bool, String)> {
    let model = DistanceModel::ExactH2;
    let pruned = enumerate_ball(
        &lab.exact_data,
        &model,
        &BallParams { radius: 10.0, k_cap: 12, c_prune: lab.c_prune_exact, node_budget: 50_000_000 },
    )?;
    let reference =
        enumerate_ball_reference(&lab.exact_data, &model, 10.0, 12, 8.0, 200_000_000)?;
    let np = pruned.count_within(10.0);
    let nr = reference.count_within(10.0);
    Ok((
        np == nr && pruned.complete,
        format!(
            "pruned count {np} vs unpruned reference {nr} at R = 10 \
             (prune constant {:.3}, complete: {})",
            lab.c_prune_exact, pruned.complete
        ),
    ))
}

fn a8(lab: &SharedLab) -> Result<(bool, String)> {
    let params = OperatorParams::default();
    let mut rhos = Vec::new();
    let mut m_star = None;
    for m in 1..=6u32 {
        let data = SchottkyData::two_factor_family(12.0, 1.5, m, Some(lab.profile.clone()))?;
        let model = DistanceModel::ModifiedCusp { cache: lab.cache.clone() };
        let op = TransferOperator::assemble(&data, &model, 0.5, &params)?;
        let sd = spectral_radius(&op)?;
        rhos.push((m, sd.rho));
        if sd.rho < 1.0 {
            m_star = Some(m);
            break;
        }
    }
    let m_star = match m_star {
        Some(m) => m,
        None => return Ok((false, format!("no convergent coupling found up to m = 6: {rhos:?}"))),
    };
    let divergent_side = rhos[0].1 > 1.0;

    // Stability of both endpoint verdicts under mesh and truncation doubling.
    let mut drifts = Vec::new();
    for &(m, rho_base) in [&rhos[0], rhos.last().expect("nonempty")] {
        let data = SchottkyData::two_factor_family(12.0, 1.5, m, Some(lab.profile.clone()))?;
        let model = DistanceModel::ModifiedCusp { cache: lab.cache.clone() };
        for refined in [params.clone().doubled_mesh(), params.clone().doubled_trunc()] {
            let op = TransferOperator::assemble(&data, &model, 0.5, &refined)?;
            let sd = spectral_radius(&op)?;
            drifts.push((sd.rho - rho_base).abs());
        }
    }
    let max_drift = drifts.iter().cloned().fold(0.0f64, f64::max);
    let stable = max_drift <= 1e-4;
    let rho_list: Vec<String> = rhos.iter().map(|(m, r)| format!("m={m}: {r:.4}")).collect();
    Ok((
        divergent_side && m_star >= 2 && stable,
        format!(
            "[{}]; divergent-side at m = 1: {divergent_side}; m* = {m_star}; \
             max refinement drift {max_drift:.2e} (tol 1e-4)",
            rho_list.join(", ")
        ),
    ))
}

fn a9(lab: &SharedLab) -> Result<(bool, String)> {
    // The chain sums interpolate the eigenfunction only at the leaf, so
    // their accuracy is set by the mesh; 320 nodes per arc put the k <= 3
    // defect safely under the criterion budget (quadratic convergence,
    // measured: 2.7e-6 at 128 nodes, 8.9e-7 at 256).
    let params = OperatorParams::default().with_nodes(320);
    let op = TransferOperator::assemble(&lab.data, &lab.model, 0.5, &params)?;
    let sd = spectral_radius(&op)?;
    let n = op.mesh.len();
    let slots = [n / 8, n / 3, n / 2, 3 * n / 4, n - 1];
    let mut worst = 0.0f64;
    for slot in slots {
        for rep in doob_level_sums(&op, &sd, slot, 3)? {
            worst = worst.max((rep.sum - 1.0).abs() - rep.tail);
        }
    }
    Ok((
        worst <= 1e-6,
        format!(
            "max |sum - 1| - tail = {worst:.2e} over 5 mesh points, k <= 3 (tol 1e-6)"
        ),
    ))
}

fn a10(lab: &SharedLab) -> Result<(bool, String)> {
    // A convergent coupling whose R = 12 window is populated: at lambda = 6
    // the third hyperbolic letter power lands inside the hat's support
    // (the canonical lambda = 5 instance has no orbit point there, which
    // would make the agreement vacuous).
    let data = SchottkyData::two_factor_family(3.4, 6.0, 1, Some(lab.profile.clone()))?;
    let model = DistanceModel::ModifiedCusp { cache: lab.cache.clone() };
    let op = TransferOperator::assemble(&data, &model, 0.5, &OperatorParams::default())?;
    let sd = spectral_radius(&op)?;
    let ctx = OrbitalContext::new(&op, &sd)?;
    let u = unit_hat()?;
    let r = 12.0;
    let rep = renewal_m(&ctx, &one, &u, r, 3, 1.5, &lab.l1)?;
    let c_prune = calibrate_prune(&data, &model, 13, 400, 5, 24)?;
    let ball = enumerate_ball(
        &data,
        &model,
        &BallParams { radius: r, k_cap: 8, c_prune, node_budget: 50_000_000 },
    )?;
    let mut direct = 0.0;
    let mut contributing = 0usize;
    for (_, d) in &ball.words {
        let term = (-0.5 * d).exp() * u.eval(-r + d);
        if term != 0.0 {
            contributing += 1;
        }
        direct += term;
    }
    let bar = rep.tail_bound + 1e-9 * direct.abs().max(1.0);
    let err = (rep.value - direct).abs();
    Ok((
        err <= bar && ball.complete && contributing > 0,
        format!(
            "renewal {:.6e} vs direct {direct:.6e} over {contributing} contributing words; \
             |diff| = {err:.2e} <= bar {bar:.2e} (rho = {:.4})",
            rep.value, sd.rho
        ),
    ))
}

fn a11(lab: &SharedLab) -> Result<(bool, String)> {
    let ctx = OrbitalContext::new(&lab.op, &lab.sd)?;
    let u = unit_hat()?;
    let alpha = 1.5;
    let mut scaled = [[0.0f64; 2]; 3];
    for (ki, k) in (1..=3usize).enumerate() {
        for (ri, r) in [30.0, 35.0].into_iter().enumerate() {
            let v = ctx.p_tilde_level(&one, &u, -r, k)?;
            scaled[ki][ri] = v * r.powf(alpha) / lab.l1.eval(r);
        }
    }
    let ratios: Vec<f64> = scaled.iter().map(|s| s[1] / s[0]).collect();
    let plateau_ok = ratios.iter().all(|&r| (0.7..=1.3).contains(&r));

    // k = 1 against the level-constant prediction.
    let plateau = factor_tail_plateau(
        &lab.data,
        &lab.model,
        0,
        0.5,
        alpha,
        &lab.l1,
        1.0,
        &[40.0, 44.0, 48.0],
        true,
    )?;
    let c0 = level_constant_cj(&ctx, 0, &PointSpec::Orbit(Word::identity()), plateau.c_j)?;
    let predicted = c0 * u.integral();
    let k1_ratio = scaled[0][1] / predicted;
    let k1_ok = (k1_ratio - 1.0).abs() <= 0.25;
    let r_list: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    Ok((
        plateau_ok && k1_ok,
        format!(
            "R35/R30 scaled ratios k=1..3: [{}] (band 0.7..1.3); k=1 value {:.4} vs \
             sum_j C_j(x0) int u = {predicted:.4} (ratio {k1_ratio:.3}, band 0.75..1.25)",
            r_list.join(", "),
            scaled[0][1]
        ),
    ))
}

/// The counting grid and the decade window used by A12/A13.
fn a12_grid() -> Vec<f64> {
    (20..=32).map(|i| i as f64).collect()
}

fn a12_count(lab: &SharedLab) -> Result<crate::counting::CountReport> {
    brute_count(
        &lab.data,
        &lab.model,
        0.5,
        1.5,
        &lab.l1,
        &a12_grid(),
        &BallParams { radius: 0.0, k_cap: 12, c_prune: lab.c_prune_mod, node_budget: 200_000_000 },
    )
}

fn a12(lab: &SharedLab) -> Result<(bool, String)> {
    let rep = a12_count(lab)?;
    if !rep.complete || rep.budget_exhausted {
        return Ok((false, "count enumeration incomplete or budget-truncated".into()));
    }
    // Top decade of reachable R: e^{delta R} spans a factor 10.
    let r_max = *rep.r_grid.last().expect("nonempty");
    let cut = r_max - 10f64.ln() / 0.5;
    let start = rep.r_grid.iter().position(|&r| r >= cut).expect("grid spans a decade");
    let r = &rep.r_grid[start..];
    let c = &rep.c_hat[start..];
    let cd = &rep.c_div_hat[start..];
    let drift_c = relative_slope(r, c);
    let drift_cd = relative_slope(r, cd);
    let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = c.iter().cloned().fold(0.0f64, f64::max);
    let variation = hi / lo - 1.0;
    Ok((
        drift_c.abs() < drift_cd.abs() && variation < 0.30,
        format!(
            "N({r_max}) = {}; over R in [{:.1}, {r_max}]: drift(C_hat) = {drift_c:+.4}, \
             drift(C_div_hat) = {drift_cd:+.4}, variation = {:.1}% (< 30%)",
            rep.counts.last().expect("nonempty"),
            r[0],
            100.0 * variation
        ),
    ))
}

fn a13(lab: &SharedLab) -> Result<(bool, String)> {
    let run_pair = |threads: usize| -> Result<(String, String)> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| crate::error::Error::Numeric(format!("thread pool: {e}")))?;
        pool.install(|| -> Result<(String, String)> {
            let ball = enumerate_ball(
                &lab.exact_data,
                &DistanceModel::ExactH2,
                &BallParams {
                    radius: 10.0,
                    k_cap: 12,
                    c_prune: lab.c_prune_exact,
                    node_budget: 50_000_000,
                },
            )?;
            let a7_out = format!(
                "count={} complete={} nodes={}\n",
                ball.count_within(10.0),
                ball.complete,
                ball.nodes_visited
            );
            let a12_out = count_csv(&a12_count(lab)?);
            Ok((a7_out, a12_out))
        })
    };
    let (a7_1, a12_1) = run_pair(1)?;
    let (a7_8, a12_8) = run_pair(8)?;
    let same = a7_1 == a7_8 && a12_1 == a12_8;
    let mut detail = String::new();
    write!(
        detail,
        "A7 bytes {} ({} chars), A12 bytes {} ({} chars) across 1 vs 8 workers",
        if a7_1 == a7_8 { "identical" } else { "DIFFER" },
        a7_1.len(),
        if a12_1 == a12_8 { "identical" } else { "DIFFER" },
        a12_1.len()
    )
    .expect("write to string");
    Ok((same, detail))
}

/// Run the whole suite.
pub fn run_suite() -> SuiteReport {
    let mut outcomes = Vec::new();
    run(&mut outcomes, "A1", "Clairaut oracle", a1);
    run(&mut outcomes, "A2", "integral anchors", a2);
    match SharedLab::build() {
        Ok(lab) => {
            run(&mut outcomes, "A3", "asymptotic length normal form", || a3(&lab));
            run(&mut outcomes, "A4", "excursion decay envelope", || a4(&lab));
            run(&mut outcomes, "A5", "window-sum constant", || a5(&lab));
            run(&mut outcomes, "A6", "cocycle telescoping", || a6(&lab));
            run(&mut outcomes, "A7", "pruned ball oracle", || a7(&lab));
            run(&mut outcomes, "A8", "classification flip in the coupling", || a8(&lab));
            run(&mut outcomes, "A9", "Markov normalization", || a9(&lab));
            run(&mut outcomes, "A10", "renewal vs direct summation", || a10(&lab));
            run(&mut outcomes, "A11", "per-level window plateaus", || a11(&lab));
            run(&mut outcomes, "A12", "convergent-shape count trend", || a12(&lab));
            run(&mut outcomes, "A13", "worker-count determinism", || a13(&lab));
        }
        Err(e) => {
            for (id, title) in [
                ("A3", "asymptotic length normal form"),
                ("A4", "excursion decay envelope"),
                ("A5", "window-sum constant"),
                ("A6", "cocycle telescoping"),
                ("A7", "pruned ball oracle"),
                ("A8", "classification flip in the coupling"),
                ("A9", "Markov normalization"),
                ("A10", "renewal vs direct summation"),
                ("A11", "per-level window plateaus"),
                ("A12", "convergent-shape count trend"),
                ("A13", "worker-count determinism"),
            ] {
                outcomes.push(CriterionOutcome {
                    id,
                    title,
                    passed: false,
                    detail: format!("shared instance build failed: {e}"),
                    seconds: 0.0,
                });
            }
        }
    }
    SuiteReport { outcomes }
}

//! Command-line front end.
//!
//! Every subcommand loads one TOML configuration (file, then repeatable
//! dotted `--set` overrides), echoes the fully resolved document into the
//! output directory, writes its CSV artifacts there, and prints a short
//! plain-text summary. Runs are deterministic: the same configuration and
//! seed produce byte-identical CSV output at any worker count.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cusplab::accept::run_suite;
use cusplab::clairaut::{distance_for_n, envelope_check};
use cusplab::coding::{enumerate_ball, BallParams, calibrate_prune, DistanceModel};
use cusplab::config::{ModelKind, RunConfig};
use cusplab::counting::{
    asymptotic_fit, brute_count, count_csv, renewal_m, CountReport, OrbitalContext, TestFunction,
};
use cusplab::error::{Error, Result};
use cusplab::hyperbolic::{BoundaryPoint, SchottkyData};
use cusplab::profile::CuspProfile;
use cusplab::svf::SlowlyVaryingSpec;
use cusplab::transfer::{
    classify, critical_exponent, parabolic_series_diverges, rho_curve, spectral_radius,
    CriticalBranch, TransferOperator,
};

#[derive(Parser)]
#[command(
    name = "cusplab",
    version,
    about = "Numerical laboratory for orbital counting with perturbed cusps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted configuration override, e.g. counting.k_max=4 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Output directory for CSV artifacts; overrides output.dir.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    ExactH2,
    ModifiedCusp,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> ModelKind {
        match m {
            ModelArg::ExactH2 => ModelKind::ExactH2,
            ModelArg::ModifiedCusp => ModelKind::ModifiedCusp,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the certified cusp profile: t, T, T', T'', K.
    Profile {
        #[arg(long, default_value_t = 0.0)]
        t_lo: f64,
        #[arg(long, default_value_t = 30.0)]
        t_hi: f64,
        #[arg(long, default_value_t = 301)]
        points: usize,
    },
    /// Solve cusp excursion geodesics for a list of displacements.
    Geodesics {
        /// Profile exponent override.
        #[arg(long)]
        alpha: Option<f64>,
        /// Slowly varying factor, e.g. constant:1, power_of_log:2, iterated_log:1.5.
        #[arg(long, value_name = "KIND:VALUE")]
        l: Option<String>,
        /// Comma-separated displacements; default 1,2,5,10,100.
        #[arg(long, value_name = "N1,N2,...")]
        n_list: Option<String>,
        /// Use the unperturbed constant-curvature profile (closed-form oracle).
        #[arg(long)]
        hyperbolic: bool,
    },
    /// Check the profile certificate, the decay envelope and the ping-pong tables.
    Validate,
    /// Dump orbit words with their distances.
    Words {
        #[arg(long, default_value_t = 10.0)]
        radius: f64,
        /// Word length cap; defaults to counting.ball_k_cap.
        #[arg(long)]
        k: Option<usize>,
        /// Cap on the number of rows written.
        #[arg(long, value_name = "ROWS")]
        max: Option<usize>,
    },
    /// Count orbit points over the configured radius grid.
    Count {
        #[arg(long)]
        model: Option<ModelArg>,
        /// Replace the grid with integer radii 1..=R.
        #[arg(long, value_name = "R")]
        r_max: Option<f64>,
        /// Exponential normalization rate of the C_hat columns.
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
    },
    /// Locate the critical exponent and emit the rho-vs-s curve.
    Delta {
        /// Parabolic letter truncation override.
        #[arg(long)]
        trunc: Option<i64>,
        /// Mesh nodes per arc override.
        #[arg(long)]
        mesh: Option<usize>,
    },
    /// Three-valued convergence verdict at the factor exponent.
    Classify {
        #[arg(long, default_value_t = 0.5)]
        s: f64,
        #[arg(long, default_value_t = 1e-4)]
        margin: f64,
    },
    /// Renewal-operator evaluation of the counting functional.
    Renewal {
        /// Comma-separated radii; defaults to counting.r_grid.
        #[arg(long, value_name = "R1,R2,...")]
        r: Option<String>,
        #[arg(long)]
        k_max: Option<usize>,
    },
    /// Count orbit points and fit the asymptotic shape.
    Fit {
        #[arg(long)]
        model: Option<ModelArg>,
        #[arg(long, value_name = "R")]
        r_max: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
    },
    /// Run the built-in acceptance suite; nonzero exit on any failure.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.common.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    let cfg = RunConfig::load(cli.common.config.as_deref(), &cli.common.set)?;
    let out = cli.common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    fs::create_dir_all(&out)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))?;
    write_text(&out.join("resolved.toml"), &cfg.resolved()?)?;

    match cli.command {
        Command::Profile { t_lo, t_hi, points } => cmd_profile(&cfg, &out, t_lo, t_hi, points)?,
        Command::Geodesics { alpha, l, n_list, hyperbolic } => {
            cmd_geodesics(&cfg, &out, alpha, l.as_deref(), n_list.as_deref(), hyperbolic)?
        }
        Command::Validate => cmd_validate(&cfg, &out)?,
        Command::Words { radius, k, max } => cmd_words(&cfg, &out, radius, k, max)?,
        Command::Count { model, r_max, delta } => {
            let report = count_report(&cfg, model, r_max, delta)?;
            write_text(&out.join("count.csv"), &count_csv(&report))?;
            println!(
                "count: N({}) = {} over {} radii; complete: {}, budget exhausted: {}, \
                 nodes {} -> {}",
                report.r_grid.last().expect("nonempty grid"),
                report.counts.last().expect("nonempty grid"),
                report.r_grid.len(),
                report.complete,
                report.budget_exhausted,
                report.nodes_visited,
                out.join("count.csv").display()
            );
        }
        Command::Delta { trunc, mesh } => cmd_delta(&cfg, &out, trunc, mesh)?,
        Command::Classify { s, margin } => cmd_classify(&cfg, &out, s, margin)?,
        Command::Renewal { r, k_max } => cmd_renewal(&cfg, &out, r.as_deref(), k_max)?,
        Command::Fit { model, r_max, delta } => {
            let report = count_report(&cfg, model, r_max, delta)?;
            write_text(&out.join("count.csv"), &count_csv(&report))?;
            let fit = asymptotic_fit(&report)?;
            let csv = format!(
                "c_hat,drift,c_div_drift,variation,window_lo,window_hi,points\n\
                 {:.12e},{:.12e},{:.12e},{:.12e},{:.6},{:.6},{}\n",
                fit.c_hat, fit.drift, fit.c_div_drift, fit.variation, fit.window.0,
                fit.window.1, fit.points
            );
            write_text(&out.join("fit.csv"), &csv)?;
            println!(
                "fit: C_hat = {:.6e} over R in [{:.1}, {:.1}] ({} points); \
                 drift {:+.4e} vs divergent-shape drift {:+.4e}; variation {:.2}%",
                fit.c_hat,
                fit.window.0,
                fit.window.1,
                fit.points,
                fit.drift,
                fit.c_div_drift,
                100.0 * fit.variation
            );
        }
        Command::Selftest => return cmd_selftest(&out),
    }
    Ok(0)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for piece in s.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        out.push(
            piece
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("'{piece}' is not a number")))?,
        );
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no numbers in list '{s}'")));
    }
    Ok(out)
}

fn parse_l(spec: &str) -> Result<SlowlyVaryingSpec> {
    let (kind, value) = spec
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("expected KIND:VALUE, got '{spec}'")))?;
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("'{value}' is not a number")))?;
    let l = match kind.trim() {
        "constant" => SlowlyVaryingSpec::constant(v),
        "power_of_log" => SlowlyVaryingSpec::power_of_log(v),
        "iterated_log" => SlowlyVaryingSpec::iterated_log(v),
        other => {
            return Err(Error::Config(format!(
                "unknown slowly varying kind '{other}' (constant, power_of_log, iterated_log)"
            )))
        }
    };
    l.validate()?;
    Ok(l)
}

fn resolve_prune(cfg: &RunConfig, data: &SchottkyData, model: &DistanceModel) -> Result<f64> {
    match cfg.counting.prune_slack {
        Some(c) => Ok(c),
        None => calibrate_prune(
            data,
            model,
            cfg.seed,
            cfg.counting.prune_pairs,
            cfg.counting.prune_len,
            cfg.counting.prune_exp,
        ),
    }
}

fn one(_: BoundaryPoint) -> Result<f64> {
    Ok(1.0)
}

fn cmd_profile(cfg: &RunConfig, out: &Path, t_lo: f64, t_hi: f64, points: usize) -> Result<()> {
    if !(t_hi > t_lo) || points < 2 {
        return Err(Error::Validation(format!(
            "need t_hi > t_lo and at least 2 points, got [{t_lo}, {t_hi}] x {points}"
        )));
    }
    let profile = cfg.build_profile()?;
    let cert = profile.certificate();
    let mut csv = String::from("t,T,dT,ddT,K\n");
    for i in 0..points {
        let t = t_lo + (t_hi - t_lo) * i as f64 / (points - 1) as f64;
        let jet = profile.jet(t);
        csv.push_str(&format!(
            "{:.6},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            t, jet.value, jet.d1, jet.d2, jet.curvature
        ));
    }
    let path = out.join("profile.csv");
    write_text(&path, &csv)?;
    println!(
        "profile: alpha = {}, glue end = {:.4}, curvature within [{:.4}, {:.4}], \
         {points} rows -> {}",
        profile.alpha(),
        profile.glue_end(),
        cert.min_curvature,
        cert.max_curvature,
        path.display()
    );
    Ok(())
}

fn cmd_geodesics(
    cfg: &RunConfig,
    out: &Path,
    alpha: Option<f64>,
    l: Option<&str>,
    n_list: Option<&str>,
    hyperbolic: bool,
) -> Result<()> {
    let profile = if hyperbolic {
        CuspProfile::hyperbolic()
    } else {
        let mut c = cfg.clone();
        if let Some(a) = alpha {
            c.profile.alpha = a;
        }
        if let Some(spec) = l {
            c.l = parse_l(spec)?;
        }
        c.build_profile()?
    };
    let ns = match n_list {
        Some(s) => parse_f64_list(s)?,
        None => vec![1.0, 2.0, 5.0, 10.0, 100.0],
    };
    let mut csv = String::from("n,h,d_n,d_full,residual\n");
    for &n in &ns {
        let g = distance_for_n(&profile, n)?;
        // Residual against the closed form in test mode, against the
        // second-order length normal form otherwise (meaningful once
        // log log n exists).
        let residual = if profile.is_hyperbolic_mode() {
            g.d_full - (1.0 + n * n / 2.0).acosh()
        } else if n > std::f64::consts::E {
            let h = n.ln();
            g.d_full - 2.0 * (h + profile.alpha() * h.ln() - profile.l().eval(h).ln())
        } else {
            f64::NAN
        };
        csv.push_str(&format!(
            "{:.6},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            n, g.h, g.d_n, g.d_full, residual
        ));
    }
    let path = out.join("geodesics.csv");
    write_text(&path, &csv)?;
    println!(
        "geodesics: {} solves on the {} profile -> {}",
        ns.len(),
        if profile.is_hyperbolic_mode() { "unperturbed" } else { "perturbed" },
        path.display()
    );
    Ok(())
}

fn cmd_validate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let profile = cfg.build_profile()?;
    let cert = profile.certificate();
    if !cert.passed() {
        return Err(Error::Validation(format!(
            "profile certificate failed: {} grid violations, seam residual {:.2e}",
            cert.failures.len(),
            cert.seam_residual
        )));
    }
    let ns: Vec<f64> = (0..10).map(|i| 10f64.powf(3.0 + 4.0 * i as f64 / 9.0)).collect();
    let envelope = envelope_check(&profile, &ns, 200)?;
    if let Some((n, s, f, bound)) = envelope.first_violation {
        return Err(Error::Validation(format!(
            "excursion envelope violated at n = {n:.3e}, s = {s:.3}: {f:.6} > {bound:.6}"
        )));
    }
    // Instance construction re-runs the ping-pong validation.
    let (data, model) = cfg.build_instance()?;
    let csv = format!(
        "grid_points,min_K,max_K,max_dT,seam_residual,envelope_points,factors,model\n\
         {},{:.6},{:.6},{:.6},{:.3e},{},{},{}\n",
        cert.grid_points,
        cert.min_curvature,
        cert.max_curvature,
        cert.max_d1,
        cert.seam_residual,
        envelope.checked,
        data.factors.len(),
        if model.is_modified() { "modified_cusp" } else { "exact_h2" }
    );
    write_text(&out.join("validate.csv"), &csv)?;
    println!(
        "validate: certificate ok on {} grid points (K within [{:.4}, {:.4}]), \
         envelope ok on {} points, ping-pong ok for {} factors",
        cert.grid_points,
        cert.min_curvature,
        cert.max_curvature,
        envelope.checked,
        data.factors.len()
    );
    Ok(())
}

fn cmd_words(
    cfg: &RunConfig,
    out: &Path,
    radius: f64,
    k: Option<usize>,
    max: Option<usize>,
) -> Result<()> {
    let (data, model) = cfg.build_instance()?;
    let c_prune = resolve_prune(cfg, &data, &model)?;
    let params = BallParams {
        radius,
        k_cap: k.unwrap_or(cfg.counting.ball_k_cap),
        c_prune,
        node_budget: cfg.counting.node_budget,
    };
    let ball = enumerate_ball(&data, &model, &params)?;
    let cap = max.unwrap_or(usize::MAX);
    let mut csv = String::from("word,length,distance\n");
    for (w, d) in ball.words.iter().take(cap) {
        csv.push_str(&format!("{w},{},{:.12e}\n", w.len(), d));
    }
    let path = out.join("words.csv");
    write_text(&path, &csv)?;
    println!(
        "words: {} within R = {radius} ({} written), prune constant {:.4}, \
         complete: {}, nodes {} -> {}",
        ball.words.len(),
        ball.words.len().min(cap),
        ball.c_prune,
        ball.complete,
        ball.nodes_visited,
        path.display()
    );
    Ok(())
}

fn count_report(
    cfg: &RunConfig,
    model: Option<ModelArg>,
    r_max: Option<f64>,
    delta: f64,
) -> Result<CountReport> {
    let mut cfg = cfg.clone();
    if let Some(m) = model {
        cfg.schottky.model = m.into();
    }
    if let Some(r) = r_max {
        if !(r >= 1.0) {
            return Err(Error::Validation(format!("--r-max must be at least 1, got {r}")));
        }
        cfg.counting.r_grid = (1..=r.floor() as i64).map(|i| i as f64).collect();
    }
    let (data, dist) = cfg.build_instance()?;
    let c_prune = resolve_prune(&cfg, &data, &dist)?;
    brute_count(
        &data,
        &dist,
        delta,
        cfg.profile.alpha,
        &cfg.l_spec(),
        &cfg.counting.r_grid,
        &cfg.ball_params(0.0, c_prune),
    )
}

fn cmd_delta(cfg: &RunConfig, out: &Path, trunc: Option<i64>, mesh: Option<usize>) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(n) = trunc {
        cfg.transfer.trunc_parabolic = n;
    }
    if let Some(n) = mesh {
        cfg.transfer.nodes_per_arc = n;
    }
    let (data, model) = cfg.build_instance()?;
    let params = cfg.operator_params();
    let crit = critical_exponent(&data, &model, &params, cfg.transfer.delta_floor, cfg.transfer.s_cap)?;
    let cls = classify(&data, &model, &params, cfg.transfer.delta_floor, 1e-4)?;

    let mut s_lo = cfg.transfer.delta_floor;
    while parabolic_series_diverges(&data, &model, s_lo) {
        s_lo += 0.05;
    }
    let s_hi = (crit.delta_gamma + 0.5).min(cfg.transfer.s_cap).max(s_lo + 0.1);
    let grid: Vec<f64> = (0..=10).map(|i| s_lo + (s_hi - s_lo) * i as f64 / 10.0).collect();
    let curve = rho_curve(&data, &model, &params, &grid)?;
    let mut csv = String::from("s,rho\n");
    for (s, rho) in &curve {
        csv.push_str(&format!("{:.6},{:.12e}\n", s, rho));
    }
    let path = out.join("rho_vs_s.csv");
    write_text(&path, &csv)?;

    let branch = match crit.branch {
        CriticalBranch::CriticalGap => "critical_gap",
        CriticalBranch::Exotic => "exotic",
    };
    println!(
        "delta: delta_Gamma = {:.8} ({branch}, bisection width {:.2e}, {} evaluations); \
         rho at s = {} is {:.6} +- {:.2e}; curve -> {}",
        crit.delta_gamma,
        crit.bisection_width,
        crit.evaluations,
        cfg.transfer.delta_floor,
        cls.rho,
        cls.uncertainty,
        path.display()
    );
    Ok(())
}

fn cmd_classify(cfg: &RunConfig, out: &Path, s: f64, margin: f64) -> Result<()> {
    let (data, model) = cfg.build_instance()?;
    let report = classify(&data, &model, &cfg.operator_params(), s, margin)?;
    let csv = format!(
        "s,verdict,rho,rho_base,rho_trunc_doubled,rho_mesh_doubled,uncertainty,margin\n\
         {:.6},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
        report.s,
        report.verdict,
        report.rho,
        report.rho_base,
        report.rho_trunc_doubled,
        report.rho_mesh_doubled,
        report.uncertainty,
        report.margin
    );
    write_text(&out.join("classify.csv"), &csv)?;
    println!(
        "classify: {} at s = {} (rho = {:.6} +- {:.2e}, margin {:.1e})",
        report.verdict, report.s, report.rho, report.uncertainty, report.margin
    );
    Ok(())
}

fn cmd_renewal(cfg: &RunConfig, out: &Path, r: Option<&str>, k_max: Option<usize>) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(k) = k_max {
        cfg.counting.k_max = k;
    }
    let rs = match r {
        Some(s) => parse_f64_list(s)?,
        None => cfg.counting.r_grid.clone(),
    };
    let (data, model) = cfg.build_instance()?;
    let delta = 0.5;
    let op = TransferOperator::assemble(&data, &model, delta, &cfg.operator_params())?;
    let sd = spectral_radius(&op)?;
    let ctx = OrbitalContext::new(&op, &sd)?;
    // The unit counting bin e_0, mollified.
    let u = TestFunction::mollified_en(0, delta, cfg.counting.mollify, 64)?;

    let mut header = String::from("R,value,tail_bound,c_u");
    for k in 0..=cfg.counting.k_max {
        header.push_str(&format!(",p{k}"));
    }
    header.push('\n');
    let mut csv = header;
    let mut last_value = 0.0;
    for &r in &rs {
        let rep = renewal_m(&ctx, &one, &u, r, cfg.counting.k_max, cfg.profile.alpha, &cfg.l)?;
        csv.push_str(&format!("{:.6},{:.12e},{:.12e},{:.12e}", r, rep.value, rep.tail_bound, rep.c_u));
        for v in &rep.per_k {
            csv.push_str(&format!(",{:.12e}", v));
        }
        csv.push('\n');
        last_value = rep.value;
    }
    let path = out.join("renewal.csv");
    write_text(&path, &csv)?;
    println!(
        "renewal: rho = {:.6}, k <= {}, {} radii (value at R = {} is {:.6e}) -> {}",
        sd.rho,
        cfg.counting.k_max,
        rs.len(),
        rs.last().expect("nonempty"),
        last_value,
        path.display()
    );
    Ok(())
}

fn cmd_selftest(out: &Path) -> Result<u8> {
    let report = run_suite();
    let mut text = String::new();
    for line in report.lines() {
        println!("{line}");
        text.push_str(&line);
        text.push('\n');
    }
    write_text(&out.join("selftest.txt"), &text)?;
    if report.all_passed() {
        println!("selftest: all criteria passed");
        Ok(0)
    } else {
        println!("selftest: FAILED {:?}", report.failed_ids());
        Ok(1)
    }
}

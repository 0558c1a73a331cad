//! End-to-end checks of the binary: exit codes, CSV schemas, and
//! byte-level determinism across runs and worker counts.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cusplab"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cusplab-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = temp_dir("badkey");
    let out = bin()
        .args(["validate", "--set", "counting.k_maximum=4", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("k_maximum"), "stderr should name the bad key: {err}");
}

#[test]
fn invalid_domain_exits_with_validation_code() {
    let dir = temp_dir("baddomain");
    // alpha <= 1 cannot be certified.
    let out = bin()
        .args(["profile", "--set", "profile.alpha=0.5", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn hyperbolic_geodesics_match_the_closed_form() {
    let dir = temp_dir("geo");
    run_ok(&[
        "geodesics",
        "--hyperbolic",
        "--n-list",
        "1,2,5,10,100",
        "--out",
        dir.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(dir.join("geodesics.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 5, "row: {line}");
        let n: f64 = cols[0].parse().unwrap();
        let d_full: f64 = cols[3].parse().unwrap();
        let oracle = (1.0 + n * n / 2.0).acosh();
        assert!(
            (d_full - oracle).abs() <= 1e-6,
            "n = {n}: d_full {d_full} vs closed form {oracle}"
        );
        rows += 1;
    }
    assert_eq!(rows, 5);
    assert!(dir.join("resolved.toml").exists(), "missing resolved-config echo");
}

#[test]
fn count_csv_is_deterministic_across_runs_and_worker_counts() {
    let base: Vec<String> = [
        "count",
        "--model",
        "exact-h2",
        "--r-max",
        "8",
        "--set",
        "counting.ball_k_cap=10",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let mut outputs = Vec::new();
    for (tag, workers) in [("w1", "1"), ("w4", "4"), ("w1b", "1")] {
        let dir = temp_dir(&format!("det-{tag}"));
        let mut args = base.clone();
        args.extend(["--workers".into(), workers.into(), "--out".into()]);
        let mut cmd = bin();
        cmd.args(&args).arg(&dir);
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        outputs.push(fs::read_to_string(dir.join("count.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "worker count changed the CSV bytes");
    assert_eq!(outputs[0], outputs[2], "re-run changed the CSV bytes");
    assert!(outputs[0].starts_with("R,N,C_hat,C_div_hat,drift\n"));
    // N column: nondecreasing positive integers, identity included at R = 1.
    let counts: Vec<u64> = outputs[0]
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts.len(), 8);
    assert!(counts[0] >= 1);
    assert!(counts.windows(2).all(|w| w[0] <= w[1]), "counts not monotone: {counts:?}");
}

#[test]
fn words_and_classify_emit_their_schemas() {
    let dir = temp_dir("words");
    run_ok(&[
        "words",
        "--radius",
        "6",
        "--set",
        "schottky.model=exact_h2",
        "--max",
        "40",
        "--out",
        dir.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(dir.join("words.csv")).unwrap();
    assert!(csv.starts_with("word,length,distance\n"));
    assert!(csv.lines().any(|l| l.starts_with("e,0,")), "identity row missing");

    let dir = temp_dir("classify");
    run_ok(&[
        "classify",
        "--set",
        "transfer.nodes_per_arc=32",
        "--set",
        "transfer.trunc_parabolic=128",
        "--out",
        dir.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(dir.join("classify.csv")).unwrap();
    assert!(csv.starts_with("s,verdict,rho,"));
    assert!(csv.contains("convergent"), "canonical instance should classify convergent: {csv}");
}

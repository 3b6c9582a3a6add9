use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_unaligned-cp");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("UNALIGNED_CP_OUT")
        .args(args)
        .output()
        .expect("spawn binary")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_data(dir: &Path, family: &str) {
    ok(
        dir,
        &["generate", "--family", family, "--n", "8", "--p", "6", "--grid-size", "31", "--out", "gen", "--dump-xi"],
    );
}

fn value(toml_text: &str, key: &str) -> toml::Value {
    let table: toml::Table = toml_text.parse().unwrap();
    table[key].clone()
}

#[test]
fn generate_decompose_evaluate_pipeline() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_data(d, "gaussian");
    for f in ["data.csv", "truth.csv", "true_A.csv", "true_B.csv", "xi.csv", "summary.toml"] {
        assert!(d.join("gen").join(f).exists(), "missing {f}");
    }
    let summary = ok(d, &["decompose", "--input", "gen/data.csv", "--out", "fit", "--iters", "4"]);
    for f in ["A.csv", "B.csv", "theta.csv", "grid.csv", "trajectory.csv", "labels.csv", "config.toml", "summary.toml"] {
        assert!(d.join("fit").join(f).exists(), "missing {f}");
    }
    assert_eq!(value(&summary, "iterations").as_integer(), Some(4));
    let traj = fs::read_to_string(d.join("fit/trajectory.csv")).unwrap();
    assert!(traj.starts_with("iteration,relative_loss,"));
    assert_eq!(traj.lines().count(), 6);

    let fitted = value(&summary, "relative_loss").as_float().unwrap();
    let eval = ok(d, &["evaluate", "--model", "fit"]);
    let scored = value(&eval, "relative_loss").as_float().unwrap();
    assert!((fitted - scored).abs() <= 1e-10 * fitted.max(1.0), "{fitted} vs {scored}");
}

#[test]
fn gradient_solvers_run_on_counts() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_data(d, "poisson");
    for algo in ["grkhs", "s-grkhs"] {
        let out = ok(
            d,
            &["decompose", "--input", "gen/data.csv", "--algo", algo, "--loss", "poisson", "--epochs", "3", "--out", algo],
        );
        assert_eq!(value(&out, "kernel").as_str(), Some("radial"));
        assert!(value(&out, "final_loss").as_float().unwrap().is_finite());
        let traj = fs::read_to_string(d.join(algo).join("trajectory.csv")).unwrap();
        assert!(traj.starts_with("iteration,loss,"));
        let eval = ok(d, &["evaluate", "--model", algo]);
        assert_eq!(value(&eval, "loss"), value(&out, "final_loss"));
    }
}

#[test]
fn runs_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_data(d, "gaussian");
    for out in ["a", "b"] {
        ok(d, &["decompose", "--input", "gen/data.csv", "--algo", "s-rkhs", "--seed", "7", "--iters", "3", "--out", out]);
    }
    for f in ["A.csv", "B.csv", "theta.csv"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f} differs");
    }
    ok(d, &["generate", "--n", "8", "--p", "6", "--grid-size", "31", "--out", "gen2"]);
    assert_eq!(fs::read(d.join("gen/data.csv")).unwrap(), fs::read(d.join("gen2/data.csv")).unwrap());
}

#[test]
fn malformed_csv_reports_the_line() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.csv"), "subject,feature,time,value\n0,0,0.1,1.0\n0,1,0.2,oops\n").unwrap();
    let out = run(d, &["decompose", "--input", "bad.csv", "--out", "fit"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "stderr: {err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.toml"), "rank = 2\nranks = 3\n").unwrap();
    let out = run(d, &["decompose", "--config", "run.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ranks"));
}

#[test]
fn least_squares_solver_refuses_other_losses() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_data(d, "poisson");
    let out = run(d, &["decompose", "--input", "gen/data.csv", "--algo", "rkhs", "--loss", "poisson"]);
    assert!(!out.status.success());
}

#[test]
fn flags_override_config_and_env_overrides_config_out_dir() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_data(d, "gaussian");
    fs::write(d.join("run.toml"), "input = \"gen/data.csv\"\nrank = 2\niters = 2\nout_dir = \"from_config\"\n").unwrap();

    ok(d, &["decompose", "--config", "run.toml", "--rank", "3"]);
    let summary = fs::read_to_string(d.join("from_config/summary.toml")).unwrap();
    assert_eq!(value(&summary, "rank").as_integer(), Some(3));
    assert_eq!(value(&summary, "iterations").as_integer(), Some(2));

    let out = Command::new(BIN)
        .current_dir(d)
        .env("UNALIGNED_CP_OUT", "from_env")
        .args(["decompose", "--config", "run.toml"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("from_env/summary.toml").exists());

    ok(d, &["decompose", "--config", "run.toml", "--out", "from_flag"]);
    assert!(d.join("from_flag/summary.toml").exists());
}

#[test]
fn single_precision_run() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_data(d, "gaussian");
    let out = ok(d, &["decompose", "--input", "gen/data.csv", "--precision", "f32", "--iters", "3", "--out", "f32"]);
    assert_eq!(value(&out, "precision").as_str(), Some("f32"));
    assert!(value(&out, "relative_loss").as_float().unwrap() < 1.0);
    ok(d, &["evaluate", "--model", "f32"]);
}

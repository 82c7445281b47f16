use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_influence-lab"));
    c.env("INFLUENCE_LAB_THREADS", "2");
    c
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("bad json ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn estimate_smoke() {
    let cfg = data_dir().join("ate.cfg");
    let out = run(&["estimate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["tool"], "influence-lab");
    assert_eq!(v["seed"], 3);
    // Defaults are echoed.
    assert_eq!(v["config"]["folds"], 5);
    assert_eq!(v["config"]["alpha"], 0.05);
    assert_eq!(v["config"]["learners"]["trim"], 0.01);
    let r = &v["result"];
    assert_eq!(r["method"], "one_step");
    assert_eq!(r["n"], 200);
    assert_eq!(r["eif_values"].as_array().unwrap().len(), 200);
    let psi = r["psi_hat"].as_f64().unwrap();
    let (lo, hi) = (r["ci"][0].as_f64().unwrap(), r["ci"][1].as_f64().unwrap());
    assert!(lo < psi && psi < hi);
    // The toy data have a true effect of 1.
    assert!((psi - 1.0).abs() < 4.0 * r["se"].as_f64().unwrap());

    let again = json(&run(&["estimate", "--config", cfg.to_str().unwrap()]));
    assert_eq!(again["result"], v["result"]);
}

#[test]
fn estimate_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = data_dir().join("ate.cfg");
    let out_path = dir.path().join("out.json");
    let out = run(&[
        "estimate",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data_dir().join("toy.csv").to_str().unwrap(),
        "--method",
        "tmle",
        "--folds",
        "2",
        "--alpha",
        "0.1",
        "--omit-eif",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out_path).unwrap()).unwrap();
    let r = &v["result"];
    assert_eq!(r["method"], "tmle");
    assert_eq!(r["diagnostics"]["folds"], 2);
    assert_eq!(r["alpha"], 0.1);
    assert!(r.get("eif_values").is_none());
    assert!(r["diagnostics"]["post_condition"].as_f64().unwrap().abs() <= 1e-10);
}

#[test]
fn rejects_non_differentiable_estimands() {
    let dir = tempfile::tempdir().unwrap();
    let density = write(
        dir.path(),
        "density.cfg",
        "[data]\ndgp = normal-mean\nn = 100\n\n[estimand]\nname = density_at_point\ny = 0\n",
    );
    let out = run(&["estimate", "--config", &density]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("density_at_point(y = 0) is not pathwise differentiable"));

    let cond = write(
        dir.path(),
        "cond.cfg",
        &format!(
            "[data]\npath = {}\ncolumn.y = outcome continuous\ncolumn.z1 = exposure continuous\n\n\
             [estimand]\nname = conditional_mean_at\nx = 0.5\n",
            data_dir().join("toy.csv").display()
        ),
    );
    let out = run(&["estimate", "--config", &cond]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("conditional_mean_at(x = 0.5) is not pathwise differentiable"));

    let out = run(&["verify-eif", "--spec", "density_at_point(y=1)"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("not pathwise differentiable"));
}

#[test]
fn config_errors_exit_one_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let q = write(
        dir.path(),
        "q.cfg",
        "[data]\ndgp = normal-mean\nn = 100\n[estimand]\nname = quantile\n[learners]\ndensity_at_quantile = kde\n",
    );
    let out = run(&["estimate", "--config", &q]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("line 4") && msg.contains("`tau`"), "{msg}");

    let bad = write(dir.path(), "bad.cfg", "[data]\ndgp = normal-mean\nn = 100\nshape = round\n[estimand]\nname = population_mean\n");
    let out = run(&["estimate", "--config", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 4"), "{}", stderr(&out));

    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["estimate", "--config", "/nonexistent.cfg"]).status.code(), Some(1));
}

#[test]
fn numerical_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "treated.csv", "y,x,z\n1,1,0.1\n2,1,0.5\n3,1,0.9\n2,1,0.3\n");
    let cfg = write(
        dir.path(),
        "ate.cfg",
        &format!(
            "[data]\npath = {csv}\ncolumn.y = outcome continuous\ncolumn.x = exposure binary\n\
             column.z = covariate continuous\n[estimand]\nname = ate\n[learners]\n\
             outcome_mean = ols\npropensity = logistic\n[run]\nfolds = 2\n"
        ),
    );
    let out = run(&["estimate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn verify_eif_counts_and_failure_code() {
    let out = run(&["verify-eif", "--spec", "all", "--trials", "3", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    let catalog = v["result"]["specs"].as_array().unwrap().len();
    assert_eq!(v["result"]["reports"].as_array().unwrap().len(), 3 * catalog);
    assert_eq!(v["result"]["failures"], 0);

    let out = run(&["verify-eif", "--spec", "ate", "--trials", "2", "--at-one", "--all-contaminants"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(json(&out)["result"]["identity"], "at_one");

    // An impossible tolerance must fail through the exit code.
    let out = run(&["verify-eif", "--spec", "covariance", "--trials", "2", "--tolerance", "1e-300"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(json(&out)["result"]["failures"].as_u64().unwrap() > 0);
}

#[test]
fn simulate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("sim.json");
    let svg = dir.path().join("z.svg");
    let out = run(&[
        "simulate", "--dgp", "ate-linear", "--method", "plugin,one-step", "--n", "300", "--reps", "20",
        "--seed", "1", "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let reports = v["result"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[1]["completed"], 20);

    let out = run(&[
        "report", "--input", out_path.to_str().unwrap(), "--svg", svg.to_str().unwrap(), "--index", "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().next().unwrap().starts_with("dgp"));
    assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"));

    let quantile = run(&[
        "simulate", "--dgp", "normal-mean", "--estimand", "quantile(tau=0.5)", "--method", "ee", "--n",
        "200", "--reps", "5",
    ]);
    assert_eq!(quantile.status.code(), Some(0), "{}", stderr(&quantile));
    assert_eq!(json(&quantile)["result"][0]["spec"]["tau"], 0.5);
}

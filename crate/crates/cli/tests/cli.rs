use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const EXAMPLE: &str = r#"{"counts": [145, 96, 35, 29, 20, 11, 4, 4, 4, 3, 3, 2, 2, 1, 1, 1, 1, 1]}"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn file(&self, name: &str, text: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_cmcheck"))
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("CMCHECK_SEED")
            .output()
            .unwrap()
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn trine_model_check_favors_model() {
    let w = Workspace::new();
    w.file("trine.csv", "count\n3416\n1912\n1748\n");
    let o = w.run(&["--out", "r", "check-model", "--counts", "trine.csv", "--region", "trine:0.3333333333333333", "--ndraws", "100000"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&w.out("r/model_check.json"));
    assert_eq!(r["verdict"], "favor");
    assert_eq!(r["command"], "check-model");
    assert_eq!(r["seed"], 42);
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    assert!((r["report"]["rb"].as_f64().unwrap() - 1.6540).abs() < 0.002);
}

#[test]
fn grouped_ordered_check_on_example_counts() {
    let w = Workspace::new();
    w.file("ex.json", EXAMPLE);
    let o = w.run(&["--out", "r", "check-model", "--counts", "ex.json", "--region", "ordered", "--group", "pairs", "--ndraws", "200000"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rb = json(&w.out("r/model_check.json"))["report"]["rb"].as_f64().unwrap();
    assert!((rb / 14726.0 - 1.0).abs() < 0.15, "{rb}");
}

#[test]
fn evidence_against_exits_three() {
    let w = Workspace::new();
    w.file("c.json", r#"{"counts": [900, 50, 50]}"#);
    let o = w.run(&["--out", "r", "check-model", "--counts", "c.json", "--region", "trine:0.3333333333333333", "--ndraws", "20000"]);
    assert_eq!(code(&o), 3);
    assert_eq!(json(&w.out("r/model_check.json"))["verdict"], "against");
}

#[test]
fn malformed_counts_report_line_number() {
    let w = Workspace::new();
    w.file("bad.csv", "count\n12\n7\nseven\n");
    let o = w.run(&["check-model", "--counts", "bad.csv", "--region", "ordered"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bad.csv:4:"), "{}", stderr(&o));
    let o = w.run(&["check-model", "--counts", "missing.csv", "--region", "ordered"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_one() {
    let w = Workspace::new();
    w.file("ex.json", EXAMPLE);
    for args in [
        vec!["check-model", "--counts", "ex.json"],
        vec!["check-model", "--counts", "ex.json", "--region", "cube"],
        vec!["check-model", "--counts", "ex.json", "--region", "trine:0.3"],
        vec!["check-model", "--counts", "ex.json", "--region", "pauli", "--group", "pairs"],
        vec!["check-model", "--counts", "ex.json", "--region", "ordered", "--group", "m=7"],
    ] {
        let o = w.run(&args);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn prior_check_requires_passing_model_check() {
    let w = Workspace::new();
    w.file("trine.csv", "3416\n1912\n1748\n");
    w.file("prior.json", r#"{"kind": "trine", "a": 0.3333333333333333}"#);
    let args = ["--out", "r", "check-prior", "--counts", "trine.csv", "--prior", "prior.json", "--npred", "100", "--nis", "2000"];
    let o = w.run(&args);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));

    let mut forced = args.to_vec();
    forced.push("--force");
    let o = w.run(&forced);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&w.out("r/prior_check.json"))["model_check"], "forced");

    let o = w.run(&["--out", "r", "check-model", "--counts", "trine.csv", "--region", "trine:0.3333333333333333", "--ndraws", "20000"]);
    assert_eq!(code(&o), 0);
    let o = w.run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&w.out("r/prior_check.json"));
    assert_eq!(r["model_check"], "passed");
    assert_eq!(r["verdict"], "no_conflict");
    assert!(r["report"]["pvalue"].as_f64().unwrap() > 0.5);
    let csv = fs::read_to_string(w.out("r/prior_check_points.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
}

#[test]
fn model_check_for_other_counts_does_not_unlock_prior_check() {
    let w = Workspace::new();
    w.file("a.csv", "3416\n1912\n1748\n");
    w.file("b.csv", "3400\n1900\n1776\n");
    w.file("prior.json", r#"{"kind": "trine", "a": 0.3333333333333333}"#);
    let o = w.run(&["--out", "r", "check-model", "--counts", "a.csv", "--region", "trine:0.3333333333333333", "--ndraws", "20000"]);
    assert_eq!(code(&o), 0);
    let o = w.run(&["--out", "r", "check-prior", "--counts", "b.csv", "--prior", "prior.json", "--npred", "10", "--nis", "100"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("different counts"));
}

#[test]
fn missing_prior_file_exits_one() {
    let w = Workspace::new();
    w.file("trine.csv", "3416\n1912\n1748\n");
    let o = w.run(&["check-prior", "--counts", "trine.csv", "--prior", "nope.json", "--force"]);
    assert_eq!(code(&o), 1);
    w.file("weird.json", r#"{"alphas": [1, 2]}"#);
    let o = w.run(&["check-prior", "--counts", "trine.csv", "--prior", "weird.json", "--force"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn elicit_writes_prior_file() {
    let w = Workspace::new();
    let o = w.run(&["--out", "r", "elicit", "--k", "17", "--lower", "0.0022222222222222222", "--upper", "0.5", "--gamma", "0.99"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p = json(&w.out("r/prior.json"));
    assert!((p["tau"].as_f64().unwrap() - 2.85).abs() < 0.3);
    assert_eq!(p["omega_alphas"].as_array().unwrap().len(), 18);
    for key in ["k", "delta", "l", "u", "gamma"] {
        assert!(p.get(key).is_some(), "{key}");
    }
    let r = json(&w.out("r/elicitation.json"));
    assert!(!r["report"]["search"]["trace"].as_array().unwrap().is_empty());

    let o = w.run(&["elicit", "--k", "17", "--lower", "0.2", "--upper", "0.5"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn posterior_uses_elicited_prior() {
    let w = Workspace::new();
    w.file("ex.json", EXAMPLE);
    let o = w.run(&["--out", "r", "elicit", "--k", "17", "--lower", "0.0022222222222222222", "--upper", "0.5", "--ndraws", "20000"]);
    assert_eq!(code(&o), 0);
    let o = w.run(&["--out", "r", "posterior", "--counts", "ex.json", "--prior", "r/prior.json", "--sweeps", "300", "--burn-in", "100", "--chains", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(w.out("r/posterior_samples.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("chain,sweep,theta_1,"));
    assert_eq!(lines.count(), 400);
    let s = json(&w.out("r/posterior_summary.json"));
    let pooled = s["report"]["pooled"].as_array().unwrap();
    assert_eq!(pooled.len(), 18);
    let means: Vec<f64> = pooled.iter().map(|c| c["mean"].as_f64().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] >= w[1]));

    let o = w.run(&["posterior", "--counts", "ex.json", "--prior", "r/prior.json", "--sweeps", "0"]);
    assert_eq!(code(&o), 1);
    w.file("dir.json", r#"{"kind": "dirichlet", "alphas": [1, 1, 1]}"#);
    let o = w.run(&["posterior", "--prior", "dir.json", "--sweeps", "10", "--burn-in", "0"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn consistency_converges_to_limit() {
    let w = Workspace::new();
    let o = w.run(&["--out", "r", "consistency", "--alphas", "2,2", "--theta", "0.3,0.7", "--schedule", "100,1000,10000", "--replications", "200"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let curve = fs::read_to_string(w.out("r/convergence_summary.csv")).unwrap();
    let last: Vec<&str> = curve.lines().last().unwrap().split(',').collect();
    assert_eq!(last[0], "10000");
    assert!(last[2].parse::<f64>().unwrap() < 0.05);
    let rows = fs::read_to_string(w.out("r/convergence.csv")).unwrap();
    assert_eq!(rows.lines().count(), 601);
}

#[test]
fn distance_check_emits_histogram() {
    let w = Workspace::new();
    w.file("c.json", r#"{"counts": [40, 25, 15, 10, 6, 4]}"#);
    let o = w.run(&["--out", "r", "check-model", "--counts", "c.json", "--zm-delta", "0.05", "--ndraws", "5000", "--cache-dir", "cache"]);
    assert!(code(&o) == 0 || code(&o) == 3, "{}", stderr(&o));
    let csv = fs::read_to_string(w.out("r/model_check_distance.csv")).unwrap();
    assert!(csv.starts_with("bin_left,prior_density,post_density\n"));
    assert_eq!(fs::read_dir(w.out("cache")).unwrap().count(), 1);
}

#[test]
fn reports_are_byte_identical_for_same_config_and_seed() {
    let w = Workspace::new();
    w.file("trine.csv", "3416\n1912\n1748\n");
    w.file("prior.json", r#"{"kind": "trine", "a": 0.3333333333333333}"#);
    let mut reports = Vec::new();
    for (out, workers) in [("a", "1"), ("b", "2")] {
        let o = w.run(&["--out", out, "--workers", workers, "check-model", "--counts", "trine.csv", "--region", "trine:0.3333333333333333", "--ndraws", "20000"]);
        assert_eq!(code(&o), 0);
        let o = w.run(&["--out", out, "--workers", workers, "check-prior", "--counts", "trine.csv", "--prior", "prior.json", "--npred", "50", "--nis", "1000"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        reports.push((
            fs::read(w.out(&format!("{out}/model_check.json"))).unwrap(),
            fs::read(w.out(&format!("{out}/prior_check.json"))).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);

    let o = w.run(&["--out", "c", "--seed", "7", "check-model", "--counts", "trine.csv", "--region", "trine:0.3333333333333333", "--ndraws", "20000"]);
    assert_eq!(code(&o), 0);
    let a = json(&w.out("a/model_check.json"));
    let c = json(&w.out("c/model_check.json"));
    assert_eq!(a["config_hash"], c["config_hash"]);
    assert_eq!(c["seed"], 7);
}

#[test]
fn environment_overrides_flags() {
    let w = Workspace::new();
    w.file("trine.csv", "3416\n1912\n1748\n");
    let o = Command::new(env!("CARGO_BIN_EXE_cmcheck"))
        .args(["check-model", "--region", "trine:0.3333333333333333"])
        .current_dir(w.dir.path())
        .env("CMCHECK_SEED", "99")
        .env("CMCHECK_COUNTS", "trine.csv")
        .env("CMCHECK_NDRAWS", "1000")
        .env("CMCHECK_OUT", "env-out")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&w.out("env-out/model_check.json"));
    assert_eq!(r["seed"], 99);
    assert_eq!(r["config"]["n_draws"], 1000);
}

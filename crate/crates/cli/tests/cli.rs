use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pomirl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pomirl")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn maze(dir: &Path) -> std::path::PathBuf {
    let model = dir.join("maze.json");
    let out = pomirl(&["env", "maze", "--out", path(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    model
}

#[test]
fn env_writes_model_and_sidecar_spec() {
    let dir = tempfile::tempdir().unwrap();
    let model = maze(dir.path());
    let spec = fs::read_to_string(model.with_extension("spec")).unwrap();
    assert_eq!(spec.trim(), "G !bad >= 0.9");
    let doc = json(&model);
    assert_eq!(doc["states"].as_array().unwrap().len(), 17);
    assert_eq!(doc["observations"].as_array().unwrap().len(), 11);
    let out = pomirl(&["validate", "--model", path(&model), "--spec", path(&model.with_extension("spec"))]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("valid"));
}

#[test]
fn generation_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        assert!(pomirl(&["env", "obstacle", "--n", "6", "--seed", "3", "--out", path(p)]).status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn unsupported_environment_is_an_input_error() {
    let out = pomirl(&["env", "rocks", "--out", "/tmp/never-written.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not supported"));
    assert_eq!(pomirl(&["solve-forward", "--bogus"]).status.code(), Some(1));
}

#[test]
fn corrupt_model_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("bad.json");
    fs::write(
        &model,
        r#"{"states": 2, "actions": 1, "observations": 1, "discount": 0.9, "initial": [[0, 1.0]],
            "transitions": [[0, 0, 1, 1.0], [1, 0, 1, "one"]], "observation_fn": [[0, 0, 1.0], [1, 0, 1.0]]}"#,
    )
    .unwrap();
    let out = pomirl(&["validate", "--model", path(&model)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("transitions"), "{err}");

    fs::write(&model, "{\"states\": 1,").unwrap();
    assert_eq!(pomirl(&["validate", "--model", path(&model)]).status.code(), Some(1));
}

#[test]
fn one_state_model_is_solved_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("one.json");
    fs::write(
        &model,
        r#"{"states": 1, "actions": 2, "observations": 1, "discount": 0.9, "initial": [[0, 1.0]],
            "transitions": [[0, 0, 0, 1.0], [0, 1, 0, 1.0]], "observation_fn": [[0, 0, 1.0]],
            "features": {"r": [[0, 0, 1.0], [0, 1, 1.0]]}, "theta": {"r": 1.0}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("fwd");
    let out = pomirl(&["solve-forward", "--model", path(&model), "--memory", "1", "--out", path(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&out_dir.join("summary.json"));
    // uniform is optimal: entropy ln 2/(1-γ), return 1/(1-γ)
    assert!((summary["entropy"].as_f64().unwrap() - 2f64.ln() * 10.0).abs() < 1e-6);
    assert!((summary["return"].as_f64().unwrap() - 10.0).abs() < 1e-9);
    assert_eq!(summary["format_version"], 1);
    let policy = json(&out_dir.join("policy.json"));
    let row: Vec<f64> = policy["sigma"][0].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(row.iter().all(|p| (p - 0.5).abs() < 1e-6));
    let iters = fs::read_to_string(out_dir.join("iters.csv")).unwrap();
    assert!(iters.starts_with("# format_version=1\niteration,rho,"));
}

#[test]
fn demos_are_normalized_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let model = maze(dir.path());
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        let out = pomirl(&["demo", "--model", path(&model), "--count", "10", "--horizon", "100", "--seed", "5", "--out", path(p)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 10);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let steps = v["steps"].as_array().unwrap();
        assert_eq!(steps.len(), 100);
        for st in steps {
            let total: f64 = st["belief"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn seeds_fan_out_into_separate_directories() {
    let dir = tempfile::tempdir().unwrap();
    let model = maze(dir.path());
    let out_dir = dir.path().join("demos");
    let out = pomirl(&["demo", "--model", path(&model), "--count", "2", "--horizon", "20", "--seeds", "1,2", "--out", path(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let one = fs::read_to_string(out_dir.join("seed-1/demos.jsonl")).unwrap();
    let two = fs::read_to_string(out_dir.join("seed-2/demos.jsonl")).unwrap();
    assert_ne!(one, two);
    let merged = fs::read_to_string(out_dir.join("seeds.csv")).unwrap();
    assert_eq!(merged.lines().count(), 4);
}

#[test]
fn irl_without_updates_matches_the_forward_solve() {
    let dir = tempfile::tempdir().unwrap();
    let model = maze(dir.path());
    let demos = dir.path().join("demos.jsonl");
    assert!(pomirl(&["demo", "--model", path(&model), "--count", "3", "--out", path(&demos)]).status.success());
    let irl_dir = dir.path().join("irl");
    let out = pomirl(&[
        "irl", "--model", path(&model), "--demos", path(&demos), "--outer-iters", "0", "--theta0", "1,1,1",
        "--rollouts", "50", "--out", path(&irl_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fwd_dir = dir.path().join("fwd");
    let out = pomirl(&["solve-forward", "--model", path(&model), "--theta", "1,1,1", "--out", path(&fwd_dir)]);
    assert!(out.status.success());
    assert_eq!(json(&irl_dir.join("policy.json")), json(&fwd_dir.join("policy.json")));
    let theta = fs::read_to_string(irl_dir.join("theta.csv")).unwrap();
    assert!(theta.lines().nth(1).unwrap().starts_with("iteration,theta_bad,theta_target,theta_time,grad_norm"));
    assert_eq!(theta.lines().count(), 3);
}

#[test]
fn irl_reruns_are_identical_and_eval_reads_the_policy() {
    let dir = tempfile::tempdir().unwrap();
    let model = maze(dir.path());
    let spec = model.with_extension("spec");
    let demos = dir.path().join("demos.jsonl");
    assert!(pomirl(&["demo", "--model", path(&model), "--count", "5", "--out", path(&demos)]).status.success());
    let mut csvs = Vec::new();
    for run in ["r1", "r2"] {
        let out_dir = dir.path().join(run);
        let out = pomirl(&[
            "irl", "--model", path(&model), "--demos", path(&demos), "--spec", path(&spec), "--outer-iters", "2",
            "--rollouts", "100", "--max-iters", "40", "--out", path(&out_dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push((
            fs::read_to_string(out_dir.join("theta.csv")).unwrap(),
            fs::read_to_string(out_dir.join("eval.csv")).unwrap(),
        ));
    }
    assert_eq!(csvs[0], csvs[1]);
    let summary = json(&dir.path().join("r1/summary.json"));
    assert!(summary["spec_probability"].as_f64().is_some());

    let eval_dir = dir.path().join("eval");
    let out = pomirl(&[
        "eval", "--model", path(&model), "--policy", path(&dir.path().join("r1/policy.json")), "--spec", "G !bad >= 0.9",
        "--rollouts", "200", "--out", path(&eval_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ev = json(&eval_dir.join("summary.json"));
    let exact = ev["spec_probability"].as_f64().unwrap();
    let mc = ev["spec_monte_carlo"].as_f64().unwrap();
    let se = ev["spec_monte_carlo_se"].as_f64().unwrap();
    assert!((exact - mc).abs() <= 4.0 * se + 1e-9, "{exact} vs {mc} ± {se}");
}

#[test]
fn memory_product_policies_round_trip_through_eval() {
    let dir = tempfile::tempdir().unwrap();
    let model = maze(dir.path());
    let fwd_dir = dir.path().join("fwd");
    let out = pomirl(&["solve-forward", "--model", path(&model), "--memory", "2", "--max-iters", "5", "--out", path(&fwd_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let policy = json(&fwd_dir.join("policy.json"));
    assert_eq!(policy["product"]["memory_size"], 2);
    let out = pomirl(&[
        "eval", "--model", path(&model), "--policy", path(&fwd_dir.join("policy.json")), "--rollouts", "20",
        "--out", path(&dir.path().join("eval")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

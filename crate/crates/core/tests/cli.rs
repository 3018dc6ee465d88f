use std::path::Path;
use std::process::{Command, Output};

fn erasekit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erasekit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const CONFIG: &str = r#"{
    "seed": 3,
    "output_dir": "run",
    "kernel": {"family": "gaussian", "bandwidth": 0.5},
    "kram": {"epochs": 2, "batch_size": 50, "lambda": 1.0},
    "evaluation": {"probes": ["linear"], "alignment_k": 20}
}"#;

#[test]
fn gen_erase_eval_align_flow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), CONFIG).unwrap();

    let gen = stdout_json(&erasekit(
        d,
        &["gen-data", "--generator", "synthetic-continuous", "--n", "200", "--d", "6", "--seed", "3", "-o", "data.krdm"],
    ));
    assert_eq!(gen["n"], 200);
    assert_eq!(gen["d"], 6);

    let erase = stdout_json(&erasekit(d, &["erase", "-c", "cfg.json", "--data", "data.krdm"]));
    assert_eq!(erase["steps"], 8);
    for f in ["checkpoint.kram", "trace.csv", "erased.krdm", "loss_evolution.csv"] {
        assert!(d.join("run").join(f).exists(), "{f} missing");
    }

    let eval = stdout_json(&erasekit(d, &["eval", "-c", "cfg.json", "--data", "data.krdm"]));
    assert!(eval["mse_concept_before"].is_number());
    assert!(eval["mse_concept_after"].is_number());
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("run/evaluation.json")).unwrap()).unwrap();
    assert_eq!(doc["alignment_k"], 20);

    let align = stdout_json(&erasekit(
        d,
        &["align", "--original", "data.krdm", "--erased", "run/erased.krdm", "-k", "10", "--degree-norm", "l1"],
    ));
    assert_eq!(align["k"], 10);
    assert_eq!(align["overlap_histogram"].as_array().unwrap().len(), 11);

    let mass = stdout_json(&erasekit(d, &["eigen-mass", "--data", "data.krdm", "--checkpoint", "run/checkpoint.kram"]));
    let sum: f64 = mass["eigen_mass"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-9);
}

#[test]
fn misspelled_config_key_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"kram": {"lamda": 1.0}}"#).unwrap();
    let out = erasekit(dir.path(), &["erase", "-c", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = erasekit(dir.path(), &["eigen-mass", "--data", "nope.krdm"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_erasure_writes_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = erasekit(d, &["gen-data", "--generator", "uniform", "--n", "120", "--d", "8", "--m", "8", "-o", "u.csv"]);
    assert!(gen.status.success());
    let out = stdout_json(&erasekit(d, &["simulate-erasure", "--data", "u.csv", "-k", "30", "-o", "sim"]));
    assert!(out["pearson"].is_number() || out["pearson"].is_null());
    let csv = std::fs::read_to_string(d.join("sim/alignment_vs_iteration.csv")).unwrap();
    assert!(csv.starts_with("iteration,accuracy,a_k\n"));
    // header plus one row per removed direction
    assert_eq!(csv.lines().count(), 1 + 8);
}

//! End-to-end checks of the command-line surface: config handling, exit
//! codes, CSV/SVG emission, and byte-identical reruns.

use std::path::Path;
use std::process::Command;

fn msgm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_msgm"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL_GAUSSIAN: &str = r#"{
  "experiment": "gaussian",
  "axis": "K",
  "axis_values": [1, 3],
  "fixed": {"n": 200, "d": 6, "beta_sim": 0.5, "n_test": 100},
  "seeds": 2,
  "master_seed": 77,
  "emit_theory": true
}"#;

#[test]
fn gaussian_sweep_writes_csv_and_svg_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_GAUSSIAN);
    let csv1 = dir.path().join("a.csv");
    let svg = dir.path().join("a.svg");
    let status = msgm()
        .args(["gaussian-sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&csv1)
        .arg("--svg")
        .arg(&svg)
        .status()
        .unwrap();
    assert!(status.success());

    let csv2 = dir.path().join("b.csv");
    let status = msgm()
        .args(["gaussian-sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&csv2)
        .status()
        .unwrap();
    assert!(status.success());

    let a = std::fs::read(&csv1).unwrap();
    let b = std::fs::read(&csv2).unwrap();
    assert_eq!(a, b, "same master_seed must give byte-identical CSV");

    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# msgm "));
    assert!(text.lines().nth(1).unwrap().starts_with("axis,"));
    // 2 axis values x 2 strategies x 2 estimators.
    assert_eq!(text.lines().count(), 2 + 8);

    let svg_text = std::fs::read_to_string(&svg).unwrap();
    assert!(svg_text.starts_with("<svg"));
    assert_eq!(svg_text.matches("<polyline").count(), 4);
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_GAUSSIAN);
    let mut outputs = Vec::new();
    for threads in ["1", "2"] {
        let out = dir.path().join(format!("t{threads}.csv"));
        let status = msgm()
            .env("MSGM_THREADS", threads)
            .args(["gaussian-sweep", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL_GAUSSIAN.replace("\"seeds\": 2", "\"seeds\": 2, \"typo\": 1");
    let cfg = write_config(dir.path(), "bad.json", &bad);
    let out = dir.path().join("x.csv");
    let status = msgm()
        .args(["gaussian-sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_fixed_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL_GAUSSIAN.replace("\"d\": 6, ", "");
    let cfg = write_config(dir.path(), "bad.json", &bad);
    let status = msgm()
        .args(["gaussian-sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x.csv"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn arm_sweep_runs_at_desk_scale() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "arm.json",
        r#"{
          "experiment": "arm",
          "axis": "K",
          "axis_values": [1, 2],
          "fixed": {"n": 120, "M": 2, "D": 3, "de": 3, "L": 2, "W": 4,
                    "lr": 0.3, "batch": 20, "iters": 60},
          "seeds": 1,
          "master_seed": 5
        }"#,
    );
    let out = dir.path().join("arm.csv");
    let status = msgm()
        .args(["arm-sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    // 2 axis values x 2 strategies, exact estimator only.
    assert_eq!(text.lines().count(), 2 + 4);
    assert!(text.contains(",exact,"));
    assert!(!text.contains(",monte_carlo,"));
}

#[test]
fn bounds_subcommand_prints_expected_json() {
    let output = msgm()
        .args([
            "bounds",
            "--instantiation",
            "gaussian",
            "--mode",
            "multi",
            "--param",
            "n=500",
            "--param",
            "K=5",
            "--param",
            "d=10",
            "--param",
            "d1=5",
            "--param",
            "B=5",
            "--param",
            "delta=0.1",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let v: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    let tv = v["tv_bound"].as_f64().unwrap();
    assert!((tv - 2.4363095288658098).abs() < 1e-6);
    assert!(v["log_bracketing"].as_f64().unwrap() > 0.0);

    // Missing parameter is a configuration error.
    let output = msgm()
        .args([
            "bounds",
            "--instantiation",
            "ebm",
            "--mode",
            "single",
            "--param",
            "n=100",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn bracket_verify_families() {
    for (family, epsilon) in [("gaussian", "0.002"), ("ebm1d", "0.1"), ("constant", "0.25")] {
        let output = msgm()
            .args([
                "bracket-verify",
                "--family",
                family,
                "--epsilon",
                epsilon,
                "--seed",
                "9",
            ])
            .output()
            .unwrap();
        assert!(output.status.success(), "{family} failed");
        let v: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
        assert_eq!(v["dominance_violations"].as_u64().unwrap(), 0);
        let gap = v["exact_l1_gap"].as_f64().unwrap();
        let eps = v["epsilon"].as_f64().unwrap();
        assert!(gap <= eps, "{family}: gap {gap} > {eps}");
    }
}

#[test]
fn selftest_passes_on_fresh_build() {
    let output = msgm().arg("selftest").output().unwrap();
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(output.status.success(), "selftest failed:\n{text}");
    assert!(text.contains("Proposition 3.2"));
    assert!(!text.contains("FAIL"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY_LAMBDA: &str = r#"{"lambda": {"xi": 20, "strength": 300, "sigma": 0.05, "kappa": 0.01,
  "t_i": 0.15, "t_end": 0.3, "snapshot_times": [0.15]}}"#;

const TINY_PLAN: &str = r#"{"plan": {
  "scheme": "lambda",
  "realizations": 2,
  "optical_depths": [10, 20],
  "strengths": [300],
  "correlation_lengths": [0.05],
  "shifts": [0, 0.5, 5],
  "dem": {"optical_depth": 20, "strength": 300, "correlation_length": 0.05,
          "probe": {"peak_time": 0.1, "duration": 0.01, "amplitude": 0.01},
          "t_i": 0.15, "t_end": 0.3}
}}"#;

fn dmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmem"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn checksums(dir: &Path) -> Vec<(String, String)> {
    manifest(dir)["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            (
                f["name"].as_str().unwrap().to_string(),
                f["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn same_seed_gives_identical_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", TINY_LAMBDA);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        ok(&dmem(&[
            "run-dem",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]));
    }
    assert_eq!(checksums(&a), checksums(&b));
    let m = manifest(&a);
    assert_eq!(m["master_seed"], 2024);
    assert!(m["defaults"]
        .as_array()
        .unwrap()
        .iter()
        .any(|d| d["field"] == "/lambda/t_p"));
    assert!(a.join("snapshots.csv").exists());
    assert!(!a.join("key_a.key").exists(), "keys are only written on request");
}

#[test]
fn seed_override_changes_results_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", TINY_LAMBDA);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&dmem(&[
        "run-dem",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]));
    ok(&dmem(&[
        "run-dem",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "99",
        "--save-keys",
    ]));
    assert_eq!(manifest(&b)["master_seed"], 99);
    assert_ne!(manifest(&a)["config_hash"], manifest(&b)["config_hash"]);
    let trace = |d: &Path| fs::read(d.join("trace.csv")).unwrap();
    assert_ne!(trace(&a), trace(&b));
    let files = manifest(&b)["files"].clone();
    let key = files
        .as_array()
        .unwrap()
        .iter()
        .find(|f| f["name"] == "key_a.key")
        .unwrap();
    assert_eq!(key["secret"], true);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "plan.json", TINY_PLAN);
    let one = tmp.path().join("one");
    let two = tmp.path().join("two");
    for (threads, out) in [("1", &one), ("2", &two)] {
        ok(&dmem(&[
            "heatmap",
            "--threads",
            threads,
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]));
    }
    assert_eq!(checksums(&one), checksums(&two));
    assert_eq!(manifest(&two)["threads"], 2);
}

#[test]
fn ensemble_commands_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "plan.json", TINY_PLAN);
    let cfg = cfg.to_str().unwrap();
    for (cmd, file, extra) in [
        ("shift-sweep", "shift_sweep.csv", vec![]),
        ("brute-force", "brute_force.csv", vec!["--keys", "3"]),
        ("keytest", "keytest.csv", vec![]),
    ] {
        let out = tmp.path().join(cmd);
        let mut args = vec![cmd, "--config", cfg, "--out", out.to_str().unwrap()];
        args.extend(extra);
        ok(&dmem(&args));
        assert!(out.join(file).exists(), "{cmd}");
        assert!(out.join("manifest.json").exists(), "{cmd}");
    }
}

#[test]
fn schema_errors_report_field_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.json",
        "{\"lambda\": {\n \"xi\": 20,\n \"strength\": \"lots\",\n \"sigma\": 0.05, \"kappa\": 0.01, \"t_i\": 0.15}}",
    );
    let out = tmp.path().join("out");
    let res = dmem(&[
        "run-dem",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("lambda.strength") && err.contains("line 3"), "{err}");
    assert!(!out.exists());
}

#[test]
fn physics_violations_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "wide.json",
        &TINY_LAMBDA.replace("\"sigma\": 0.05", "\"sigma\": 2"),
    );
    let res = dmem(&["check-config", cfg.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("sigma"));
}

#[test]
fn scheme_mismatch_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", TINY_LAMBDA);
    let out = tmp.path().join("out");
    let res = dmem(&[
        "run-eit",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("`n` config"));
}

#[test]
fn check_config_prints_resolved_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", TINY_LAMBDA);
    let res = dmem(&["check-config", cfg.to_str().unwrap()]);
    ok(&res);
    let resolved: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(resolved["lambda"]["trial"], "key1");
    assert!(String::from_utf8_lossy(&res.stderr).contains("default /lambda/seed = 2024"));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            ok(&dmem(&["check-config", path.to_str().unwrap()]));
            n += 1;
        }
    }
    assert!(n >= 5);
}

//! Black-box tests of the `ndopt` binary: determinism, exit codes, file
//! contracts, and config handling.

use std::path::Path;
use std::process::{Command, Output};

fn ndopt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ndopt"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("failed to spawn ndopt")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn gen_small(dir: &Path, out: &str, seed: u64) {
    let seed = seed.to_string();
    let out = ndopt(
        &[
            "gen-data", "--k", "3", "--d", "4", "--n1", "60", "--rho-l", "10", "--rho-u", "10",
            "--m1", "60", "--sep", "2.5", "--seed", &seed, "--val-per-class", "20",
            "--test-per-class", "20", "--out", out,
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "gen-data failed: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_data_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), "a", 5);
    gen_small(dir.path(), "b", 5);
    for name in ["labeled.ndm", "unlabeled.ndm", "val.ndm", "test.ndm", "manifest.json"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["k"], 3);
    assert_eq!(manifest["labeled_counts"].as_array().unwrap().len(), 3);
}

#[test]
fn gen_data_rejects_sub_one_imbalance() {
    let dir = tempfile::tempdir().unwrap();
    let out = ndopt(&["gen-data", "--rho-l", "0.5", "--out", "x"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn finetune_zero_steps_keeps_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), "data", 5);
    let out = ndopt(
        &["finetune", "--data", "data", "--steps", "0", "--cycle", "3", "--out", "run"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["initial_val"], report["final_val"]);
}

#[test]
fn finetune_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), "data", 5);
    for run in ["r1", "r2"] {
        let out = ndopt(
            &[
                "finetune", "--data", "data", "--steps", "5", "--cycle", "3", "--seed", "9",
                "--out", run,
            ],
            dir.path(),
        );
        assert_eq!(code(&out), 0);
    }
    for name in ["report.json", "report.csv", "model.ndw"] {
        let a = std::fs::read(dir.path().join("r1").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("r2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn finetune_missing_data_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ndopt(&["finetune", "--data", "nope", "--out", "run"], dir.path());
    assert_eq!(code(&out), 3);
}

#[test]
fn corrupt_feature_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), "data", 5);
    std::fs::write(dir.path().join("data/labeled.ndm"), b"XXXXgarbage").unwrap();
    let out = ndopt(&["finetune", "--data", "data", "--out", "run"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), "data", 5);
    std::fs::write(dir.path().join("tune.cfg"), "cycle = 2\nsteps = 4 # small\n").unwrap();
    let out = ndopt(
        &[
            "finetune", "--data", "data", "--config", "tune.cfg", "--steps", "3", "--out", "run",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["params"]["cycle"], 2, "file value should apply");
    assert_eq!(report["params"]["steps"], 3, "flag should override file");
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), "data", 5);
    std::fs::write(dir.path().join("bad.cfg"), "bogus = 1\n").unwrap();
    let out = ndopt(&["finetune", "--data", "data", "--config", "bad.cfg", "--out", "run"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn csst_without_unlabeled_weight_matches_supervised_run() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), "data", 5);
    std::fs::create_dir(dir.path().join("sup")).unwrap();
    for name in ["labeled.ndm", "val.ndm", "test.ndm"] {
        std::fs::copy(dir.path().join("data").join(name), dir.path().join("sup").join(name))
            .unwrap();
    }
    let common = ["--steps", "64", "--eval-period", "32", "--seed", "4", "--sigma-aug", "0.3"];
    let mut a = vec!["csst", "--data", "data", "--lambda-u", "0", "--out", "ru"];
    a.extend_from_slice(&common);
    let mut b = vec!["csst", "--data", "sup", "--out", "rs"];
    b.extend_from_slice(&common);
    assert_eq!(code(&ndopt(&a, dir.path())), 0);
    assert_eq!(code(&ndopt(&b, dir.path())), 0);
    let wa = std::fs::read(dir.path().join("ru/model.ndw")).unwrap();
    let wb = std::fs::read(dir.path().join("rs/model.ndw")).unwrap();
    assert_eq!(wa, wb);
}

#[test]
fn csst_huge_kl_threshold_accepts_everything() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), "data", 5);
    let out = ndopt(
        &[
            "csst", "--data", "data", "--tau-kl", "1e9", "--steps", "96", "--eval-period", "32",
            "--out", "run",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/report.json")).unwrap())
            .unwrap();
    let rates: Vec<f64> = report["cycles"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|c| c["mask_accept_rate"].as_f64())
        .collect();
    assert!(!rates.is_empty());
    assert!(rates.iter().all(|&r| r == 1.0), "rates {rates:?}");
}

#[test]
fn simulate_policy_reports_the_bound_holding() {
    let dir = tempfile::tempdir().unwrap();
    let out = ndopt(
        &["simulate-policy", "--k", "3", "--t", "200", "--s", "10", "--streams", "5"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["all_hold"], true);
    assert!(report["bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn gain_check_passes_clean_and_fails_when_a_bug_is_injected() {
    let dir = tempfile::tempdir().unwrap();
    let clean = ndopt(&["gain-check", "--samples", "5", "--ks", "2,3"], dir.path());
    assert_eq!(code(&clean), 0, "{}", String::from_utf8_lossy(&clean.stderr));
    let report: serde_json::Value = serde_json::from_slice(&clean.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["max_rel_err"].as_f64().unwrap() <= 1e-5);

    let buggy =
        ndopt(&["gain-check", "--samples", "5", "--ks", "2,3", "--inject-bug"], dir.path());
    assert_eq!(code(&buggy), 4);
    let report: serde_json::Value = serde_json::from_slice(&buggy.stdout).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn invalid_thread_cap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ndopt"))
        .args(["gain-check", "--samples", "1", "--ks", "2"])
        .env("NDOPT_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

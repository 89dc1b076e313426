use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pinn(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pinn"));
    cmd.args(args).env_remove("PINN_OUT_DIR");
    if let Some(dir) = out_env {
        cmd.env("PINN_OUT_DIR", dir);
    }
    cmd.output().expect("spawn pinn")
}

fn tiny_config(dir: &Path, iterations: usize) -> String {
    let path = dir.join("tiny.json");
    let cfg = format!(
        r#"{{"problem": "burgers", "variants": ["std", "acr"], "seeds": [7, 8], "iterations": {iterations},
            "training": {{"log_every": 1}},
            "overrides": {{"hidden": [4, 4], "interior_points": 40, "eval": {{"nx": 12, "ny": 6}}}}}}"#
    );
    fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn list_problems_names_all_presets() {
    let out = pinn(&["list-problems"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["burgers", "helmholtz14", "helmholtz44", "klein_gordon", "cavity"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing:\n{text}");
    }
}

#[test]
fn missing_arguments_and_unknown_flags_exit_with_usage_code() {
    assert_eq!(pinn(&["run"], None).status.code(), Some(1));
    assert_eq!(pinn(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(pinn(&["run", "x.json", "--jobs", "many"], None).status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let out = pinn(&["--help"], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("list-problems"));
}

#[test]
fn bad_configs_are_usage_errors_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let out = pinn(&["run", missing.to_str().unwrap()], Some(dir.path()));
    assert_eq!(out.status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"problem": "burgers", "overrides": {"eval": {"nx": "wide"}}}"#).unwrap();
    let out = pinn(&["run", bad.to_str().unwrap()], Some(dir.path()));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("eval.nx"), "{err}");

    let unknown = dir.path().join("unknown.json");
    fs::write(&unknown, r#"{"problem": "burgers", "learning_rate": 0.1}"#).unwrap();
    let out = pinn(&["run", unknown.to_str().unwrap()], Some(dir.path()));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let typo = dir.path().join("typo.json");
    fs::write(&typo, r#"{"problem": "burgers", "overrides": {"interior_pionts": 10}}"#).unwrap();
    let out = pinn(&["run", typo.to_str().unwrap()], Some(dir.path()));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("interior_pionts"));
}

#[test]
fn zero_jobs_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    assert_eq!(pinn(&["run", &cfg, "--jobs", "0"], Some(dir.path())).status.code(), Some(1));
}

#[test]
fn run_writes_the_report_tree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 3);
    let out = pinn(&["run", &cfg, "--jobs", "2"], Some(&dir.path().join("env_root")));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let root = dir.path().join("env_root/burgers");
    assert!(root.join("config.json").is_file());
    let summary = fs::read_to_string(root.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3, "{summary}");
    for variant in ["std", "acr"] {
        for seed in [7, 8] {
            let run = root.join(variant).join(format!("seed_{seed}"));
            for file in ["config.json", "trace.jsonl", "heatmap.csv", "slice.csv", "params.json", "run.json"] {
                assert!(run.join(file).is_file(), "{} missing", run.join(file).display());
            }
            let trace = fs::read_to_string(run.join("trace.jsonl")).unwrap();
            assert_eq!(trace.lines().count(), 4, "{trace}");
            assert!(trace.lines().all(|l| l.contains("\"L_pde\"")));
        }
    }
    assert!(!dir.path().join("env_root/burgers/gc").exists());
}

#[test]
fn flag_overrides_beat_environment_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 5);
    let flag_root = dir.path().join("flag_root");
    let out = pinn(
        &["run", &cfg, "--seeds", "3", "--iterations", "0", "--out", flag_root.to_str().unwrap()],
        Some(&dir.path().join("env_root")),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("env_root").exists());
    let run = flag_root.join("burgers/std/seed_3");
    let trace = fs::read_to_string(run.join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 1);
    assert!(!flag_root.join("burgers/std/seed_7").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 4);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(pinn(&["run", &cfg, "--jobs", "1", "--out", a.to_str().unwrap()], None).status.success());
    assert!(pinn(&["run", &cfg, "--jobs", "3", "--out", b.to_str().unwrap()], None).status.success());
    for rel in ["burgers/summary.csv", "burgers/acr/seed_8/trace.jsonl", "burgers/acr/seed_8/params.json"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel} differs");
    }
}

#[test]
fn validate_reports_every_check_and_flags_the_injected_fault() {
    let clean = pinn(&["validate"], None);
    let text = String::from_utf8(clean.stdout).unwrap();
    assert!(text.contains("PASS  autodiff/op_tanh"), "{text}");
    // The literal Burgers stencil check fails on truncation error; see README.
    let fails: Vec<_> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert_eq!(fails.len(), 1, "{text}");
    assert!(fails[0].contains("burgers_cole_hopf_fd"));
    assert_eq!(clean.status.code(), Some(2));

    let faulty = pinn(&["validate", "--inject-fault", "tanh-derivative"], None);
    let text = String::from_utf8(faulty.stdout).unwrap();
    assert!(text.contains("FAIL  autodiff/op_tanh"), "{text}");
    assert!(text.contains("PASS  autodiff/op_mul"), "{text}");
    assert_eq!(faulty.status.code(), Some(2));
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = pinn_core::ExperimentConfig::load(&path).unwrap();
        cfg.resolve().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert_eq!(seen, 6);
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csd_lab::report::Report;
use serde_json::json;
use tempfile::TempDir;

fn csdlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csdlab"))
        .args(args)
        .current_dir(cwd)
        .env("CSDLAB_OUTPUT_ROOT", cwd.join("out"))
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn tiny_config(extra: serde_json::Value) -> serde_json::Value {
    let mut cfg = json!({
        "schema_version": 1,
        "teacher": { "family": "pair" },
        "seed": 11,
        "batch": 8,
        "net": { "backbone": "prefix-sum", "depth": 1, "width": 8, "head_hidden": 8 },
        "init": { "iterations": 12, "samples": 1 },
        "main": { "iterations": 15, "guidance_updates": 1, "samples": 1, "ema_switch": 5 },
        "dd1": { "pairs": 64, "iterations": 10 },
        "eval": { "samples": 400, "k_sweep": [1, 2, 3], "dd1": true, "track_every": 5, "track_samples": 100 },
        "checkpoint_every": 4
    });
    if let (Some(base), Some(extra)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in extra {
            base.insert(k.clone(), v.clone());
        }
    }
    cfg
}

fn write_config(dir: &Path, name: &str, cfg: &serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn toy_a_teacher_matches_golden_fixture() {
    let tmp = TempDir::new().unwrap();
    let out = csdlab(
        &["teacher", "--family", "dirichlet", "--n", "3", "--V", "4", "--C", "2", "--seed", "7", "--out", "t"],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["teacher.json", "codebook.json"] {
        assert_eq!(read(tmp.path().join("t").join(f)), read(fixtures().join("toy_a").join(f)), "{f}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("sequences 64"), "{stdout}");
}

#[test]
fn pair_teacher_matches_golden_fixture() {
    let tmp = TempDir::new().unwrap();
    let out = csdlab(&["teacher", "--family", "pair"], tmp.path());
    assert_eq!(code(&out), 0);
    for f in ["teacher.json", "codebook.json"] {
        assert_eq!(read(tmp.path().join("out").join(f)), read(fixtures().join("pair").join(f)), "{f}");
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("support 2"));
}

#[test]
fn custom_teacher_round_trips_fixture() {
    let tmp = TempDir::new().unwrap();
    let t = fixtures().join("toy_a/teacher.json");
    let c = fixtures().join("toy_a/codebook.json");
    let out = csdlab(
        &["teacher", "--family", "custom", "--teacher-file", t.to_str().unwrap(), "--codebook-file", c.to_str().unwrap(), "--out", "x"],
        tmp.path(),
    );
    assert_eq!(code(&out), 0);
    assert_eq!(read(tmp.path().join("x/teacher.json")), read(&t));
}

#[test]
fn teacher_flag_errors_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    for args in [
        &["teacher", "--family", "dirichlet", "--n", "3", "--V", "0", "--seed", "7"][..],
        &["teacher", "--family", "dirichlet", "--n", "3", "--V", "4"],
        &["teacher", "--family", "pair", "--n", "5"],
        &["teacher", "--family", "custom"],
        &["teacher", "--family", "triangle"],
        &["frobnicate"],
    ] {
        assert_eq!(code(&csdlab(args, tmp.path())), 2, "{args:?}");
    }
}

#[test]
fn config_errors_exit_three() {
    let tmp = TempDir::new().unwrap();
    let bad_field = write_config(tmp.path(), "a.json", &tiny_config(json!({ "bogus": 1 })));
    let bad_value = write_config(tmp.path(), "b.json", &tiny_config(json!({ "batch": 0 })));
    let bad_version = write_config(tmp.path(), "c.json", &tiny_config(json!({ "schema_version": 99 })));
    fs::write(tmp.path().join("d.json"), "{ not json").unwrap();
    for p in [bad_field, bad_value, bad_version, tmp.path().join("d.json")] {
        let out = csdlab(&["train", p.to_str().unwrap()], tmp.path());
        assert_eq!(code(&out), 3, "{}: {}", p.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn divergence_exits_four() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(json!({ "init": { "iterations": 12, "samples": 1, "opt": { "lr": 1e300 } } }));
    let p = write_config(tmp.path(), "cfg.json", &cfg);
    let out = csdlab(&["train", p.to_str().unwrap(), "--phase", "init", "--run-dir", "r"], tmp.path());
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_artifacts_exit_five() {
    let tmp = TempDir::new().unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();
    assert_eq!(code(&csdlab(&["eval", "empty"], tmp.path())), 5);
    assert_eq!(code(&csdlab(&["train", "nowhere.json"], tmp.path())), 5);
    let p = write_config(tmp.path(), "cfg.json", &tiny_config(json!({})));
    let out = csdlab(&["train", p.to_str().unwrap(), "--phase", "main", "--run-dir", "r"], tmp.path());
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
    let out = csdlab(&["eval", "r"], tmp.path());
    assert_eq!(code(&out), 5);
}

#[test]
fn phases_run_separately_and_eval_sweeps_k() {
    let tmp = TempDir::new().unwrap();
    let p = write_config(tmp.path(), "cfg.json", &tiny_config(json!({})));
    let p = p.to_str().unwrap();
    let out = csdlab(&["train", p, "--phase", "init", "--run-dir", "r"], tmp.path());
    assert_eq!(code(&out), 0);
    let r = tmp.path().join("r");
    assert!(r.join("checkpoints/init.json").exists());
    assert!(!r.join("checkpoints/main.json").exists());
    let phases: Vec<String> = read(r.join("metrics.csv")).lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect();
    assert_eq!(phases.len(), 12);
    assert!(phases.iter().all(|p| p == "init"));

    assert_eq!(code(&csdlab(&["train", p, "--phase", "main", "--run-dir", "r"], tmp.path())), 0);
    let out = csdlab(&["eval", "r", "--samples", "300", "--k-sweep", "1,2,3"], tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Report = serde_json::from_str(&read(r.join("report.json"))).unwrap();
    assert_eq!(report.k_sweep.iter().map(|p| p.k).collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(report.samples, 300);
    assert_eq!(report.baselines.set_prediction_tv, 0.5);
    assert!(report.baselines.dd1_tv.is_none());
    assert!(read(r.join("tv_vs_k.svg")).contains("<polyline"));

    let out = csdlab(&["eval", "r", "--k-sweep", "4"], tmp.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn interrupted_run_resumes_to_identical_artifacts() {
    let tmp = TempDir::new().unwrap();
    let p = write_config(tmp.path(), "cfg.json", &tiny_config(json!({})));
    let p = p.to_str().unwrap();
    assert_eq!(code(&csdlab(&["train", p, "--run-dir", "whole"], tmp.path())), 0);
    for budget in ["5", "9", "13"] {
        let out = csdlab(&["train", p, "--run-dir", "parts", "--stop-after", budget], tmp.path());
        assert_eq!(code(&out), 0);
        assert!(String::from_utf8_lossy(&out.stdout).contains("stopped"));
    }
    assert_eq!(code(&csdlab(&["train", p, "--run-dir", "parts"], tmp.path())), 0);
    let (a, b) = (tmp.path().join("whole"), tmp.path().join("parts"));
    for f in ["metrics.csv", "report.json", "checkpoints/main.json", "checkpoints/dd1.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let metrics = read(a.join("metrics.csv"));
    assert_eq!(metrics.lines().next().unwrap(), "phase,iteration,loss,guidance_loss,lr,ema_rate,eval_tv");
    assert_eq!(metrics.lines().filter(|l| l.starts_with("main,")).count(), 15);
    assert_eq!(metrics.lines().filter(|l| l.starts_with("main,") && !l.ends_with(',')).count(), 3);
}

#[test]
fn run_directory_rejects_a_different_config() {
    let tmp = TempDir::new().unwrap();
    let a = write_config(tmp.path(), "a.json", &tiny_config(json!({})));
    let b = write_config(tmp.path(), "b.json", &tiny_config(json!({ "seed": 12 })));
    assert_eq!(code(&csdlab(&["train", a.to_str().unwrap(), "--phase", "init", "--run-dir", "r"], tmp.path())), 0);
    assert_eq!(code(&csdlab(&["train", b.to_str().unwrap(), "--phase", "init", "--run-dir", "r"], tmp.path())), 3);
}

#[test]
fn default_run_dir_uses_output_root() {
    let tmp = TempDir::new().unwrap();
    let p = write_config(tmp.path(), "tiny.json", &tiny_config(json!({})));
    assert_eq!(code(&csdlab(&["train", p.to_str().unwrap(), "--phase", "init"], tmp.path())), 0);
    assert!(tmp.path().join("out/tiny/checkpoints/init.json").exists());
}

#[test]
fn run_directory_lock_is_exclusive() {
    let tmp = TempDir::new().unwrap();
    let held = csd_lab::files::lock_dir(tmp.path()).unwrap();
    assert!(matches!(csd_lab::files::lock_dir(tmp.path()), Err(csd_lab::LabError::Locked(_))));
    drop(held);
    assert!(csd_lab::files::lock_dir(tmp.path()).is_ok());
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gtf_core::ExperimentConfig;

fn gtf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const REMOVAL_SWEEP: &str = r#"{
    "world": {"preset": "scene"},
    "sampler": {"steps": 20, "n_samples": 400, "seed": 3},
    "guidance": {"mode": "removal", "src": "scene", "tgt": "c2", "cfg_scale": 1.0, "reference": "c1"},
    "sweep": {"axis": "w2", "values": [0, 0.5, 1.0, 2.0]}
}"#;

#[test]
fn removal_sweep_writes_one_row_and_heatmap_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), REMOVAL_SWEEP);
    let out = tmp.path().join("out");
    let o = gtf(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], gtf_core::experiment::METRICS_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(!metrics.contains('\r'));
    for (i, line) in lines[1..].iter().enumerate() {
        let id = format!("run_{i:03}");
        assert!(line.starts_with(&id));
        let samples = fs::read_to_string(out.join(format!("samples_{id}.csv"))).unwrap();
        assert_eq!(samples.lines().next(), Some("x0,x1"));
        assert_eq!(samples.lines().count(), 401);
        let pgm = fs::read(out.join(format!("heatmap_{id}.pgm"))).unwrap();
        let header = b"P5\n64 64\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 64 * 64);
        assert!(pgm[header.len()..].contains(&255));
    }
}

#[test]
fn repeated_runs_are_byte_identical_and_echo_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), REMOVAL_SWEEP);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = gtf(&["run", "--config", &cfg, "--out", dir.to_str().unwrap()]);
        assert!(o.status.success());
    }
    for name in ["metrics.csv", "samples_run_000.csv", "samples_run_003.csv", "heatmap_run_002.pgm"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 4);
    let echoed = ExperimentConfig::from_json(&manifest["config"].to_string()).unwrap();
    let mut original = ExperimentConfig::load(Path::new(&cfg)).unwrap();
    original.output.dir = a.clone();
    assert_eq!(echoed, original);
}

#[test]
fn seed_override_changes_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), REMOVAL_SWEEP);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(gtf(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(gtf(&["run", "--config", &cfg, "--seed", "99", "--out", b.to_str().unwrap()]).status.success());
    assert_ne!(
        fs::read(a.join("samples_run_000.csv")).unwrap(),
        fs::read(b.join("samples_run_000.csv")).unwrap()
    );
}

#[test]
fn invalid_scheduler_is_reported_by_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"guidance": {"scheduler": "quadratic"}}"#);
    let o = gtf(&["run", "--config", &cfg]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("guidance.scheduler"), "{err}");
}

#[test]
fn malformed_config_reports_line_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "{\n  \"sampler\": {\"steps\": }\n}");
    let o = gtf(&["run", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn scheduler_ablation_covers_all_kinds_with_ranks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"world": {"preset": "scene"},
            "sampler": {"steps": 10, "n_samples": 200},
            "guidance": {"mode": "removal", "src": "scene", "tgt": "c2", "w2": 0.5, "cfg_scale": 1.0}}"#,
    );
    let out = tmp.path().join("abl");
    let o = gtf(&[
        "ablate", "--config", &cfg, "--axis", "scheduler", "--values", "all", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("ablation_scheduler.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].ends_with(",value,neg_entropy,tgt_mass,rank"));
    let kinds: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(kinds, ["static", "linear", "cosine", "inverse_linear", "sine"]);
    let mut ranks: Vec<usize> = lines[1..]
        .iter()
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    ranks.sort();
    assert_eq!(ranks, [1, 2, 3, 4, 5]);
}

#[test]
fn ablation_needs_two_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "{}");
    let o = gtf(&["ablate", "--config", &cfg, "--axis", "w1", "--values", "1.0"]);
    assert!(!o.status.success());
}

#[test]
fn train_then_sample_from_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("net.txt");
    let cfg = write_config(
        tmp.path(),
        &format!(
            r#"{{"world": {{"preset": "demo", "checkpoint": {ckpt:?}}},
                "sampler": {{"steps": 10, "n_samples": 100}},
                "training": {{"hidden": [16], "epochs": 2, "samples_per_condition": 300}}}}"#,
            ckpt = ckpt.to_str().unwrap()
        ),
    );
    let o = gtf(&["train", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&ckpt).unwrap().starts_with("gtf-mlp-v1"));
    let out = tmp.path().join("out");
    let o = gtf(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("samples_run_000.csv").exists());
}

#[test]
fn check_passes_on_default_profile() {
    let o = gtf(&["check"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert!(text.contains("[PASS] score identity"));
    assert!(!text.contains("[FAIL]"));
}

#[test]
fn zero_thread_cap_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_gtf"))
        .arg("check")
        .env("GTF_THREADS", "0")
        .output()
        .unwrap();
    assert!(!o.status.success());
}

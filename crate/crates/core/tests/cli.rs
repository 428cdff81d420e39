use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clsp::store::{generate_synthetic, load_manifest, validate_dataset, ValidationReport, SynthConfig};

fn clsp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clsp")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_manifest(dir: &Path) -> std::path::PathBuf {
    let m = dir.join("m");
    ok(&clsp(&["synth", "--seed", "4", "--clusters", "6", "--clips-per-cluster", "5", "--out", p(&m)]));
    m
}

#[test]
fn synth_then_validate_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m");
    ok(&clsp(&["synth", "--seed", "7", "--out", p(&m)]));
    let out = clsp(&["validate", "--manifest", p(&m)]);
    ok(&out);
    let report: ValidationReport = serde_json::from_slice(&out.stdout).unwrap();
    let direct = validate_dataset(&generate_synthetic(&SynthConfig::default(), 7).unwrap());
    assert_eq!(report, direct);
    assert_eq!(load_manifest(&m).unwrap().len(), 256);
    assert!(m.join("prompts.json").exists());
    assert!(m.join("resolved_config.json").exists());
}

#[test]
fn gradcheck_passes_for_stage2() {
    let out = clsp(&["gradcheck", "--loss", "stage2", "--lambda", "0.5"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    let err: f64 = text
        .split_whitespace()
        .nth(3)
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("unexpected output {text}"));
    assert!(err < 1e-4, "{text}");
}

#[test]
fn batch_size_one_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_manifest(dir.path());
    let out_dir = dir.path().join("run");
    let out = clsp(&["train", "--manifest", p(&m), "--out", p(&out_dir), "--batch-size", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));
    assert!(!out_dir.exists());
}

#[test]
fn too_few_eligible_clips_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_manifest(dir.path());
    let out_dir = dir.path().join("run");
    let out = clsp(&["train", "--manifest", p(&m), "--out", p(&out_dir), "--batch-size", "64"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir.exists());
}

#[test]
fn unknown_flags_commands_and_keys_exit_one() {
    assert_eq!(clsp(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(clsp(&["gradcheck", "--bogus"]).status.code(), Some(1));
    assert_eq!(clsp(&[]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let m = small_manifest(dir.path());
    let cfg = dir.path().join("train.json");
    fs::write(&cfg, r#"{"stage1": {"steps": 10, "batch_size": 8, "learning_rate": 0.001, "sed": 3}}"#).unwrap();
    let out_dir = dir.path().join("run");
    let out = clsp(&["train", "--manifest", p(&m), "--out", p(&out_dir), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sed"));
    assert!(!out_dir.exists());
}

#[test]
fn missing_manifest_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = clsp(&["validate", "--manifest", p(&dir.path().join("nope"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn version_lists_format_versions() {
    let out = clsp(&["--version"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["manifest format 1", "checkpoint format 1", "report format 1", "rule file format 1"] {
        assert!(text.contains(key), "{text}");
    }
}

#[test]
fn flags_override_config_and_evaluations_run() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_manifest(dir.path());
    let cfg = dir.path().join("train.json");
    fs::write(
        &cfg,
        r#"{"plan": "both", "model": {"hidden": 32, "d": 16},
            "stage1": {"steps": 50, "batch_size": 8, "learning_rate": 0.001},
            "stage2": {"steps": 40, "batch_size": 8, "learning_rate": 0.0001,
                       "scheduler": {"kind": "dynamic", "p0": 0.9, "p_min": 0.5, "T": 20}},
            "holdout": {"tag": "cluster", "fraction": 0.2}}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    ok(&clsp(&[
        "train", "--manifest", p(&m), "--out", p(&run), "--config", p(&cfg), "--stage2-steps", "30",
        "--lambda", "0.7", "--seed", "9",
    ]));
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["stage2"]["steps"], 30);
    assert_eq!(resolved["stage2"]["lambda"], 0.7);
    assert_eq!(resolved["stage1"]["steps"], 50);
    assert_eq!(resolved["model"]["seed"], 9);
    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 80);
    assert!(run.join("heldout_eval.json").exists());

    let model = run.join("model.ckpt");
    let e = dir.path().join("eval");
    ok(&clsp(&["eval-retrieval", "--model", p(&model), "--manifest", p(&m), "--out", p(&e)]));
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(e.join("retrieval.json")).unwrap()).unwrap();
    assert!(r["average_map_at_10"].as_f64().unwrap().is_finite());

    ok(&clsp(&["eval-zeroshot", "--model", p(&model), "--manifest", p(&m), "--out", p(&e), "--split", "all"]));
    let z: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(e.join("zeroshot.json")).unwrap()).unwrap();
    assert_eq!(z["n"], 30);

    let out = clsp(&["score", "--model", p(&model), "--manifest", p(&m), "--clip-id", "c00_000", "--caption-row", "0"]);
    ok(&out);
    let s: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let cos = s["cosine"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&cos));

    let bad = clsp(&["score", "--model", p(&model), "--manifest", p(&m), "--clip-id", "nope", "--caption-row", "0"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn eval_correlation_reports_all_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("scores.json");
    fs::write(&input, r#"{"x": [1, 2, 3, 4, 5], "y": [2, 1, 4, 3, 5]}"#).unwrap();
    let out_dir = dir.path().join("c");
    ok(&clsp(&["eval-correlation", "--input", p(&input), "--out", p(&out_dir)]));
    let c: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("correlation.json")).unwrap()).unwrap();
    // 8 concordant and 2 discordant pairs.
    assert!((c["kendall_tau_b"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    assert!((c["spearman"].as_f64().unwrap() - 0.8).abs() < 1e-12);

    fs::write(&input, r#"{"x": [1, 1, 1], "y": [1, 2, 3]}"#).unwrap();
    assert_eq!(clsp(&["eval-correlation", "--input", p(&input), "--out", p(&out_dir)]).status.code(), Some(1));
}

#[test]
fn verify_writes_decisions_and_rules() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/verify_corpus.jsonl");
    let out_dir = dir.path().join("v");
    ok(&clsp(&["verify", "--corpus", p(&corpus), "--out", p(&out_dir)]));
    let lines = fs::read_to_string(out_dir.join("decisions.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 28);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["captions"], 28);

    let rules = out_dir.join("rules.toml");
    let again = dir.path().join("v2");
    ok(&clsp(&["verify", "--corpus", p(&corpus), "--out", p(&again), "--rules", p(&rules)]));
    assert_eq!(lines, fs::read_to_string(again.join("decisions.jsonl")).unwrap());

    let broken = dir.path().join("broken.toml");
    fs::write(&broken, fs::read_to_string(&rules).unwrap().replacen("\\bin the background\\b", "(unclosed", 1)).unwrap();
    let out = clsp(&["verify", "--corpus", p(&corpus), "--out", p(&dir.path().join("v3")), "--rules", p(&broken)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("(unclosed"));
}

#[test]
fn sweep_command_writes_table_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_manifest(dir.path());
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"axis": "lambda", "values": [0.3, 0.7],
            "model": {"hidden": 32, "d": 16},
            "stage1": {"steps": 30, "batch_size": 8, "learning_rate": 0.001},
            "stage2": {"steps": 20, "batch_size": 8, "learning_rate": 0.0001}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("s");
    let out = clsp(&["sweep", "--manifest", p(&m), "--spec", p(&spec), "--out", p(&out_dir)]);
    ok(&out);
    let table = fs::read_to_string(out_dir.join("sweep_report.txt")).unwrap();
    assert!(table.contains("lambda=0.3") && table.contains("lambda=0.7"));
    assert_eq!(String::from_utf8_lossy(&out.stdout), table);
}

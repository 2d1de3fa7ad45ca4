use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const SMALL: [&str; 8] = ["--max-epochs", "2", "--d-model", "16", "--layers", "1", "--batch-size", "16"];

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emocause"))
        .args(args)
        .current_dir(cwd)
        .env("EMOCAUSE_ROOT", cwd.join("runs"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = bin(args, cwd);
    assert!(
        out.status.success(),
        "{args:?}: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// One synthetic corpus and one trained multi-task run shared by all tests.
fn fixture() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("emocause-cli-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        ok(&["synth", "--n", "100", "--seed", "3", "--out", "data.jsonl"], &dir);
        let args = [&["train", "--data", "data.jsonl", "--variant", "multi", "--seed", "5", "--out", "run"][..], &SMALL].concat();
        ok(&args, &dir);
        dir
    })
}

#[test]
fn train_writes_the_run_layout() {
    let dir = fixture();
    for f in [
        "run/config.json",
        "run/manifest.json",
        "run/report.json",
        "run/seed-5/history.csv",
        "run/seed-5/report.json",
        "run/seed-5/checkpoint/checkpoint.json",
        "run/seed-5/checkpoint/vocab.txt",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let history = fs::read_to_string(dir.join("run/seed-5/history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,"));
    assert!(history.lines().count() >= 2);
    let report = fs::read_to_string(dir.join("run/report.json")).unwrap();
    assert!(!report.contains("unix"), "report must not carry timestamps");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["max_epochs"], 2);
}

#[test]
fn missing_data_path_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["train", "--data", "nowhere.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere.jsonl"), "{}", stderr(&out));
}

#[test]
fn bad_flags_and_config_keys_exit_2() {
    let dir = fixture();
    assert_eq!(bin(&["train", "--variant", "bogus", "--data", "data.jsonl"], dir).status.code(), Some(2));
    fs::write(dir.join("bad.json"), r#"{"learning_rate": 0.1}"#).unwrap();
    let out = bin(&["train", "--config", "bad.json", "--data", "data.jsonl"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rate"));
}

#[test]
fn flags_override_config_file() {
    let dir = fixture();
    fs::write(
        dir.join("cfg.json"),
        r#"{"variant": "single_cause", "max_epochs": 1, "lr": 0.002, "d_model": 16, "n_layers": 1}"#,
    )
    .unwrap();
    ok(
        &["train", "--config", "cfg.json", "--max-epochs", "2", "--data", "data.jsonl", "--seed", "1", "--out", "over"],
        dir,
    );
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("over/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["max_epochs"], 2);
    assert_eq!(cfg["lr"], 0.002);
    assert_eq!(cfg["variant"], "single_cause");
    assert_eq!(cfg["seeds"], serde_json::json!([1]));
}

#[test]
fn eval_reproduces_recorded_dev_metrics() {
    let dir = fixture();
    let json = ok(&["eval", "--checkpoint", "run/seed-5", "--data", "data.jsonl", "--split", "dev"], dir);
    let eval: serde_json::Value = serde_json::from_str(&json).unwrap();
    let seed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/seed-5/report.json")).unwrap()).unwrap();
    assert_eq!(eval, seed["dev"]);
    assert_eq!(eval["per_emotion"].as_array().unwrap().len(), 7);
}

#[test]
fn eval_csv_has_eleven_columns() {
    let dir = fixture();
    // a run directory holds seed-*/ checkpoints, not checkpoint/ itself
    let err = bin(&["eval", "--checkpoint", "run", "--data", "data.jsonl"], dir);
    assert_eq!(err.status.code(), Some(2));
    let csv = ok(&["eval", "--checkpoint", "run/seed-5", "--data", "data.jsonl", "--csv"], dir);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|l| l.split(',').count() == 11), "{csv}");
}

#[test]
fn missing_annotators_leave_not_gold_null() {
    let dir = fixture();
    let text = fs::read_to_string(dir.join("data.jsonl")).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("annotator_emotions");
            v.to_string() + "\n"
        })
        .collect();
    fs::write(dir.join("bare.jsonl"), stripped).unwrap();
    let json = ok(&["eval", "--checkpoint", "run/seed-5", "--data", "bare.jsonl", "--split", "test"], dir);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v["not_gold_acc"].is_null());
    assert!(v["gold_acc"].is_number());
}

#[test]
fn predict_prints_table_row_and_json() {
    let dir = fixture();
    let text = ok(&["predict", "--checkpoint", "run/seed-5", "--headline", "Durant could return for Game 3"], dir);
    assert!(text.contains("Headline: Durant could return for Game 3"));
    assert!(text.contains("Emotion:") && text.contains("Cause:"));
    let json = ok(&["predict", "--checkpoint", "run/seed-5", "--headline", "Durant could return for Game 3", "--json"], dir);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let probs = v["probabilities"].as_array().unwrap();
    assert_eq!(probs.len(), 7);
    let total: f64 = probs.iter().map(|p| p[1].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    for span in v["cause_spans"].as_array().unwrap() {
        let s = span.as_str().unwrap();
        assert_eq!(s, s.to_lowercase());
    }
    assert_eq!(v["word_tags"].as_array().unwrap().len(), 6);
}

#[test]
fn empty_headline_is_a_usage_error() {
    let dir = fixture();
    let out = bin(&["predict", "--checkpoint", "run/seed-5", "--headline", "   "], dir);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_builds_comparison_table() {
    let dir = fixture();
    ok(&["eval", "--checkpoint", "run/seed-5", "--data", "data.jsonl", "--out", "ev"], dir);
    let table = ok(&["analyze", "--reports", "run", "ev", "--out", "cmp"], dir);
    let lines: Vec<&str> = table.lines().filter(|l| !l.starts_with("wrote")).collect();
    assert_eq!(lines.len(), 3, "{table}");
    assert!(lines[0].starts_with("report,variant,seeds,gold_acc,"));
    let per = fs::read_to_string(dir.join("cmp/per_emotion.csv")).unwrap();
    assert_eq!(per.lines().count(), 1 + 7 + 7);

    let out = bin(&["analyze", "--reports", "run", "absent"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent"));
}

#[test]
fn search_smoke_run_writes_trials() {
    let dir = fixture();
    fs::write(
        dir.join("tiny.json"),
        r#"{"max_epochs": 1, "d_model": 16, "n_layers": 1, "seeds": [1], "variant": "single_cause"}"#,
    )
    .unwrap();
    let out = ok(
        &["search", "--config", "tiny.json", "--data", "data.jsonl", "--budget", "2", "--target", "cause", "--out", "s"],
        dir,
    );
    assert!(out.contains("best trial"));
    let trials = fs::read_to_string(dir.join("s/trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 3);
    let best: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("s/best_config.json")).unwrap()).unwrap();
    assert_eq!(best["target_metric"], "cause_span_f1");
    let lr = best["lr"].as_f64().unwrap();
    assert!((1e-6..=1e-4).contains(&lr));

    let wrong = bin(&["search", "--config", "tiny.json", "--data", "data.jsonl", "--budget", "1", "--target", "emotion"], dir);
    assert_eq!(wrong.status.code(), Some(2));
    let zero = bin(&["search", "--config", "tiny.json", "--data", "data.jsonl", "--budget", "0", "--target", "cause"], dir);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn default_output_goes_under_the_root() {
    let dir = fixture();
    ok(&[&["train", "--data", "data.jsonl", "--variant", "single_emotion", "--seed", "2"][..], &SMALL].concat(), dir);
    assert!(dir.join("runs/train-single_emotion-none/report.json").is_file());
}

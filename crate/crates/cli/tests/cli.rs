use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn evrel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evrel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_dataset(dir: &TempDir) -> PathBuf {
    let path = dir.path().join("data.jsonl");
    let out = evrel(&[
        "gen",
        "--spec",
        "qa-causal=4,qa-temporal=3,cfqa-subevent=3,rc-temporal-before=3,rc-causal-none=3",
        "--videos",
        "4",
        "--seed",
        "11",
        "--out",
        p(&path),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    path
}

#[test]
fn generated_dataset_validates() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let out = evrel(&["validate", "--dataset", p(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("samples: 16"));
}

#[test]
fn bad_record_exits_one_with_line_number() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let mut text = fs::read_to_string(&data).unwrap();
    text.push_str("{\"id\": \"broken\"}\n");
    fs::write(&data, text).unwrap();
    let out = evrel(&["validate", "--dataset", p(&data)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 17"), "{}", stderr(&out));
}

#[test]
fn official_check_fails_on_small_synthetic_set() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let out = evrel(&["validate", "--dataset", p(&data), "--check-official"]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("MISMATCH"));
}

#[test]
fn official_check_passes_on_official_shaped_set() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("official.jsonl");
    assert_eq!(code(&evrel(&["gen", "--out", p(&data)])), 0);
    let out = evrel(&["validate", "--dataset", p(&data), "--check-official"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(!stdout(&out).contains("MISMATCH"));
}

#[test]
fn orphan_predictions_exit_one() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let preds = dir.path().join("preds.jsonl");
    fs::write(&preds, "{\"sample_id\": \"nobody\", \"raw_text\": \"1\"}\n").unwrap();
    let out = evrel(&["score", "--dataset", p(&data), "--predictions", p(&preds)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nobody"), "{}", stderr(&out));
}

#[test]
fn toy_eval_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let run = evrel(&["eval", "--dataset", p(&data), "--provider", "toy", "--kfp", "--seed", "5", "--out", p(out)]);
        assert_eq!(code(&run), 0, "{}", stderr(&run));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn beta_one_matches_baseline() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let base = evrel(&["eval", "--dataset", p(&data), "--provider", "toy"]);
    let kfp = evrel(&["eval", "--dataset", p(&data), "--provider", "toy", "--kfp", "--beta", "1"]);
    assert_eq!(code(&base), 0);
    assert_eq!(stdout(&base), stdout(&kfp));
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let d = p(&data);
    assert_eq!(code(&evrel(&["eval", "--dataset", d, "--kfp", "--beta", "1.5"])), 2);
    assert_eq!(code(&evrel(&["eval", "--dataset", d, "--provider", "file"])), 2);
    assert_eq!(code(&evrel(&["eval", "--dataset", d, "--layers", "9..2", "--kfp"])), 2);
    assert_eq!(code(&evrel(&["eval", "--dataset", d, "--provider", "oracle"])), 2);
    assert_eq!(code(&evrel(&["score", "--dataset", d])), 2);
    assert_eq!(code(&evrel(&["sweep", "--dataset", d, "--axis", "gamma"])), 2);
    assert_eq!(code(&evrel(&["frobnicate"])), 2);
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, format!("# test\ndataset = {}\nprovider = random\nseed = 3\n", p(&data))).unwrap();
    let from_file = evrel(&["eval", "--config", p(&cfg)]);
    let from_flags = evrel(&["eval", "--dataset", p(&data), "--provider", "random", "--seed", "3"]);
    assert_eq!(code(&from_file), 0, "{}", stderr(&from_file));
    assert_eq!(stdout(&from_file), stdout(&from_flags));
    let overridden = evrel(&["eval", "--config", p(&cfg), "--seed", "4"]);
    let seed4 = evrel(&["eval", "--dataset", p(&data), "--provider", "random", "--seed", "4"]);
    assert_eq!(stdout(&overridden), stdout(&seed4));

    fs::write(&cfg, "gamma = 2\n").unwrap();
    assert_eq!(code(&evrel(&["eval", "--config", p(&cfg)])), 2);
}

#[test]
fn eval_then_score_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let preds = dir.path().join("preds.jsonl");
    let run = evrel(&["eval", "--dataset", p(&data), "--provider", "random", "--out", p(&preds)]);
    assert_eq!(code(&run), 0);
    assert!(stderr(&run).contains("samples/s"));

    let out = evrel(&["score", "--dataset", p(&data), "--predictions", p(&preds), "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["samples"], 16);
    assert_eq!(report["missing"], 0);

    // the replay providers reproduce the file exactly
    for provider in ["file", "external"] {
        let replay = evrel(&["eval", "--dataset", p(&data), "--provider", provider, "--predictions", p(&preds)]);
        assert_eq!(code(&replay), 0);
        assert_eq!(stdout(&replay), fs::read_to_string(&preds).unwrap());
    }

    let table = evrel(&["score", "--dataset", p(&data), "--predictions", p(&preds)]);
    assert!(stdout(&table).contains("SRH"));
}

#[test]
fn prompts_are_json_lines() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let out = evrel(&["prompts", "--dataset", p(&data), "--shuffle-candidates", "2"]);
    assert_eq!(code(&out), 0);
    let lines: Vec<serde_json::Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 16);
    assert!(lines[0]["prompt"].as_str().unwrap().starts_with("According to the video,"));
}

#[test]
fn sweep_table_has_reference_row() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let out = evrel(&["sweep", "--dataset", p(&data), "--axis", "beta", "--values", "0.6,0.7"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let labels: Vec<&str> = text.lines().skip(2).filter_map(|l| l.split_whitespace().next()).collect();
    assert_eq!(labels, ["Base", "0.60", "0.70"]);
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ssmsel::tasks::{read_jsonl, validate_grammar, TaskKind, Vocab};
use ssmsel::training::read_sweep_csv;

fn ssmsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssmsel")).args(args).env_remove("SSMSEL_JOBS").output().expect("spawn ssmsel")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn verify_numerics_passes_and_lists_fft_checks() {
    let o = ssmsel(&["verify", "--suite", "numerics"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let reports: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let names: Vec<&str> = reports.as_array().unwrap().iter().map(|r| r["construct"].as_str().unwrap()).collect();
    assert!(names.contains(&"fft_vs_naive"));
    assert!(reports.as_array().unwrap().iter().all(|r| r["pass"] == true));
}

#[test]
fn verify_lemma33_passes_at_acceptance_settings() {
    let o = ssmsel(&["verify", "--suite", "lemma33", "--v", "63", "--delta", "0.25", "--eps", "1e-3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn corrupted_tolerance_exits_one_and_names_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = ssmsel(&["verify", "--suite", "lemma33", "--eps", "1e-12", "--kappa-eps", "1e-3", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("FAILED: kernel_select_certificate"));
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert!(reports.as_array().unwrap().iter().any(|r| r["pass"] == false));
}

#[test]
fn config_file_is_read_and_flags_win() {
    let o = ssmsel(&["verify", "--suite", "lemma33", "--config", p(&repo_config("verify_lemma33.json")), "--eps", "1e-12", "--kappa-eps", "1e-3"]);
    assert_eq!(code(&o), 1);
    let o = ssmsel(&["verify", "--suite", "lemma33", "--config", p(&repo_config("verify_lemma33.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn usage_and_config_errors_exit_two() {
    assert_eq!(code(&ssmsel(&["verify", "--suite", "everything"])), 2);
    assert_eq!(code(&ssmsel(&["verify", "--no-such-flag"])), 2);
    assert_eq!(code(&ssmsel(&["frobnicate"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"seed": 0, "colour": "blue"}"#).unwrap();
    assert_eq!(code(&ssmsel(&["verify", "--config", p(&bad)])), 2);
    assert_eq!(code(&ssmsel(&["run", "--config", p(&bad)])), 2);
    fs::write(&bad, r#"{"dataset": {"task": {"kind": "copy", "V": 4, "vocab_size": 6, "extra": 1}, "n": 1}}"#).unwrap();
    assert_eq!(code(&ssmsel(&["run", "--config", p(&bad), "--out", p(dir.path())])), 2);
    assert_eq!(code(&ssmsel(&["run", "--config", p(&dir.path().join("missing.json"))])), 2);
}

#[test]
fn minimal_dataset_config_writes_ten_valid_lines() {
    let dir = tempfile::tempdir().unwrap();
    let o = ssmsel(&["run", "--config", p(&repo_config("copy_dataset.json")), "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("dataset.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 10);
    let samples = read_jsonl(&dir.path().join("dataset.jsonl")).unwrap();
    let vocab = Vocab::from_json(&fs::read_to_string(dir.path().join("vocab.json")).unwrap()).unwrap();
    assert!(samples.iter().all(|s| s.kind == TaskKind::Copy && s.v == 16 && validate_grammar(TaskKind::Copy, s, &vocab)));
}

#[test]
fn seed_flag_changes_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = repo_config("copy_dataset.json");
    assert_eq!(code(&ssmsel(&["run", "--config", p(&cfg), "--out", p(&a)])), 0);
    assert_eq!(code(&ssmsel(&["run", "--config", p(&cfg), "--out", p(&b), "--seed", "7"])), 0);
    assert_ne!(fs::read(a.join("dataset.jsonl")).unwrap(), fs::read(b.join("dataset.jsonl")).unwrap());
}

/// The shipped acceptance sweep with its training shrunk to a smoke run.
fn shrunk_acceptance_config(dir: &Path) -> PathBuf {
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(repo_config("acceptance_sweep.json")).unwrap()).unwrap();
    cfg["sweep"]["train"] = serde_json::json!({"epochs": 1, "n_train": 8, "n_eval": 8, "batch_size": 4});
    cfg["sweep"]["checkpoints"] = serde_json::json!(true);
    let path = dir.join("sweep.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn acceptance_sweep_shape_rerun_determinism_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = shrunk_acceptance_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = ssmsel(&["run", "--config", p(&cfg), "--out", p(&a)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&ssmsel(&["--jobs", "1", "run", "--config", p(&cfg), "--out", p(&b)])), 0);
    let csv_a = fs::read(a.join("sweep.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.join("sweep.csv")).unwrap());
    let rows = read_sweep_csv(csv_a.as_slice()).unwrap();
    assert_eq!(rows.len(), 60);
    assert_eq!(fs::read_dir(a.join("checkpoints")).unwrap().count(), 60);
    let ckpt = fs::read_to_string(a.join("checkpoints/ssm2_h16_s4.json")).unwrap();
    serde_json::from_str::<ssmsel::training::Model>(&ckpt).unwrap();

    let svg_path = dir.path().join("plot.svg");
    let o = ssmsel(&["plot", p(&a.join("sweep.csv")), "--out", p(&svg_path)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = fs::read_to_string(svg_path).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches(r#"class="series""#).count(), 3);
    assert_eq!(svg.matches(r#"class="xtick""#).count(), 4);
}

#[test]
fn plot_single_row_and_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let header = "model,hidden,seed,task,V,vocab,final_metric,best_metric,epochs,wall_ms\n";
    let one = dir.path().join("one.csv");
    fs::write(&one, format!("{header}ssm2,8,0,assoc_recall,8,16,0.5,0.6,3,0\n")).unwrap();
    assert_eq!(code(&ssmsel(&["plot", p(&one)])), 0);
    let svg = fs::read_to_string(dir.path().join("one.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 1);

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, header).unwrap();
    assert_eq!(code(&ssmsel(&["plot", p(&empty)])), 2);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,b\n1,2\n").unwrap();
    assert_eq!(code(&ssmsel(&["plot", p(&bad)])), 2);
    fs::write(&bad, format!("{header}ssm2,eight,0,assoc_recall,8,16,0.5,0.6,3,0\n")).unwrap();
    assert_eq!(code(&ssmsel(&["plot", p(&bad)])), 2);
}

#[test]
fn bench_single_length_gives_four_rows() {
    let o = ssmsel(&["bench", "--grid", "64", "--reps", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("kernel,T,D,reps,min_ms,max_ms"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    for k in ["naive_conv", "fft_conv", "scan", "attention"] {
        assert!(rows.iter().any(|r| r.starts_with(&format!("{k},64,"))));
    }
    assert!(stderr(&o).contains("fft_beats_naive at T=64"));
}

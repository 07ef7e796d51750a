//! Black-box checks of the `cdcl` binary: the four-verb pipeline on a tiny
//! synthetic dataset, plus the exit codes and messages for the common ways
//! to hold it wrong.

use std::path::Path;
use std::process::{Command, Output};

fn cdcl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdcl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).expect("write test file");
}

/// Training config for a dataset small enough that two epochs finish in
/// well under a second.
fn tiny_train_config(dir: &Path) -> String {
    format!(
        "window = 8\n\
         suspect_offset = 1\n\
         kernel_set = 2\n\
         dilation_base = 1\n\
         hidden_dim = 8\n\
         block_count = 2\n\
         transform_count = 2\n\
         max_epochs = 2\n\
         patience = 2\n\
         seed = 7\n\
         train_csv = {dir}/train.csv\n\
         test_csv = {dir}/test.csv\n\
         out_dir = {dir}\n",
        dir = dir.display()
    )
}

#[test]
fn pipeline_generate_train_score_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write(
        &root.join("gen.conf"),
        "train_length = 300\ntest_length = 160\nseed = 3\n",
    );

    let gen = cdcl(
        &["generate", "--config", "gen.conf", "--out", "."],
        root,
    );
    assert!(gen.status.success(), "generate failed: {}", stderr_of(&gen));
    assert!(root.join("train.csv").exists());
    assert!(root.join("test.csv").exists());

    write(&root.join("run.conf"), &tiny_train_config(root));
    let train = cdcl(&["train", "--config", "run.conf"], root);
    assert!(train.status.success(), "train failed: {}", stderr_of(&train));
    assert!(root.join("model.ckpt").exists());
    assert!(root.join("report.txt").exists());

    let score = cdcl(
        &["score", "model.ckpt", "test.csv", "--out", "scores.csv"],
        root,
    );
    assert!(score.status.success(), "score failed: {}", stderr_of(&score));
    let scores = std::fs::read_to_string(root.join("scores.csv")).unwrap();
    let mut lines = scores.lines();
    assert_eq!(lines.next(), Some("tick,score"));
    assert_eq!(lines.count(), 160, "one score per test tick");

    let eval = cdcl(
        &["evaluate", "scores.csv", "test.csv", "--adjust", "--out", "."],
        root,
    );
    assert!(eval.status.success(), "evaluate failed: {}", stderr_of(&eval));
    let report = std::fs::read_to_string(root.join("eval.txt")).unwrap();
    assert!(report.contains("f1"), "report lists f1: {report}");
    assert!(root.join("sweep.csv").exists());
}

#[test]
fn train_rejects_unknown_mode() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut conf = tiny_train_config(root);
    conf.push_str("mode = foo\n");
    write(&root.join("run.conf"), &conf);
    let out = cdcl(&["train", "--config", "run.conf"], root);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(
        err.contains("mode") && err.to_lowercase().contains("foo"),
        "error names the bad key and value: {err}"
    );
}

#[test]
fn train_rejects_missing_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = cdcl(&["train", "--config", "no_such.conf"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_rejects_single_class_labels() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut data = String::from("value,label\n");
    let mut scores = String::from("tick,score\n");
    for t in 0..20 {
        data.push_str(&format!("{}.0,0\n", t % 3));
        scores.push_str(&format!("{t},0.5\n"));
    }
    write(&root.join("flat.csv"), &data);
    write(&root.join("scores.csv"), &scores);
    let out = cdcl(&["evaluate", "scores.csv", "flat.csv"], root);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("degenerate labels"), "{err}");
}

#[test]
fn score_rejects_unrecognized_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write(&root.join("data.csv"), "value\n1.0\n2.0\n");

    // Truncated or unrelated file: the trailing end marker is missing.
    write(&root.join("bogus.ckpt"), "just some text\n");
    let out = cdcl(&["score", "bogus.ckpt", "data.csv"], root);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("bogus.ckpt"), "error points at the file: {err}");

    // Structurally complete file from some other tool or format version.
    write(&root.join("alien.ckpt"), "shiny-new-format\n[end]\n");
    let out = cdcl(&["score", "alien.ckpt", "data.csv"], root);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("checkpoint version"), "{err}");
}

#[test]
fn gradcheck_exits_clean_when_all_losses_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = cdcl(&["gradcheck"], dir.path());
    assert!(out.status.success(), "gradcheck failed: {}", stderr_of(&out));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert_eq!(text.matches("pass").count(), 6, "six losses reported: {text}");
    assert!(!text.contains("FAIL"), "{text}");
}

//! End-to-end CLI contract tests: exit codes, error prefixes, file
//! outputs, and reproducibility, all on a miniature corpus.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_accent-am"))
}

const TINY_CONFIG: &str = r#"
[generator]
utterances_per_accent = 8
feature_dim = 6
num_phones = 4
phones_per_utterance = [2, 4]

[model]
feature_dim = 12
num_trunk_layers = 1
trunk_hidden = 4
projection_units = 4
phones_us = 4
phones_uk = 4
aid_branch_layer = 1
aid_branch_hidden = 3

[training]
heldout_fraction = 0.25
max_epochs = 2
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.toml"), TINY_CONFIG).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }

    fn config(&self) -> String {
        self.path("tiny.toml")
    }

    fn gen_data(&self) -> String {
        let out = self.path("data");
        let result = bin()
            .args(["gen-data", "--config", &self.config(), "--out", &out])
            .output()
            .unwrap();
        assert_success(&result);
        format!("{out}/dataset.aam")
    }
}

fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "expected success, got {:?}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn assert_failure(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.lines().any(|l| l.starts_with("error:")),
        "missing `error:` prefix in: {stderr}"
    );
}

#[test]
fn gen_data_is_reproducible_and_writes_resolved_config() {
    let ws = Workspace::new();
    let first = ws.gen_data();
    let out2 = ws.path("data2");
    let result = bin()
        .args(["gen-data", "--config", &ws.config(), "--out", &out2])
        .output()
        .unwrap();
    assert_success(&result);
    let a = fs::read(&first).unwrap();
    let b = fs::read(format!("{out2}/dataset.aam")).unwrap();
    assert_eq!(a, b, "same config must produce identical dataset bytes");
    assert!(Path::new(&ws.path("data/resolved.toml")).exists());
}

#[test]
fn seed_flag_changes_the_dataset() {
    let ws = Workspace::new();
    let first = ws.gen_data();
    let out2 = ws.path("data-seeded");
    let result = bin()
        .args(["gen-data", "--config", &ws.config(), "--seed", "7", "--out", &out2])
        .output()
        .unwrap();
    assert_success(&result);
    let a = fs::read(&first).unwrap();
    let b = fs::read(format!("{out2}/dataset.aam")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let ws = Workspace::new();
    let bad = ws.path("bad.toml");
    fs::write(&bad, "[generator]\nnum_phones = 4\ntypo_key = 1\n").unwrap();
    let result = bin()
        .args(["gen-data", "--config", &bad, "--out", &ws.path("x")])
        .output()
        .unwrap();
    assert_failure(&result, 1);
}

#[test]
fn invalid_generator_range_is_a_usage_error() {
    let ws = Workspace::new();
    let bad = ws.path("range.toml");
    fs::write(&bad, "[generator]\nnoise_sigma = -1.0\n").unwrap();
    let result = bin()
        .args(["gen-data", "--config", &bad, "--out", &ws.path("x")])
        .output()
        .unwrap();
    assert_failure(&result, 1);
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let ws = Workspace::new();
    let result = bin()
        .args([
            "train",
            "--model",
            "joint",
            "--data",
            &ws.path("nonexistent.aam"),
            "--config",
            &ws.config(),
            "--out",
            &ws.path("run"),
        ])
        .output()
        .unwrap();
    assert_failure(&result, 2);
}

#[test]
fn unknown_model_kind_is_a_usage_error() {
    let ws = Workspace::new();
    let data = ws.gen_data();
    let result = bin()
        .args([
            "train", "--model", "gru", "--data", &data, "--config", &ws.config(), "--out",
            &ws.path("run"),
        ])
        .output()
        .unwrap();
    assert_failure(&result, 1);
}

#[test]
fn train_then_eval_all_modes() {
    let ws = Workspace::new();
    let data = ws.gen_data();
    for (model, out) in [("joint", "joint"), ("aid", "aid")] {
        let result = bin()
            .args([
                "train", "--model", model, "--data", &data, "--config", &ws.config(), "--out",
                &ws.path(out),
            ])
            .output()
            .unwrap();
        assert_success(&result);
    }
    let log = fs::read_to_string(ws.path("joint/train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,heldout_loss,per_us,per_uk,aid_acc,lr\n"));
    assert_eq!(log.lines().count(), 3, "two epochs plus header");

    let ckpt = ws.path("joint/checkpoint.aam");
    let aid_ckpt = ws.path("aid/checkpoint.aam");
    for mode in ["oracle", "switched:joint"] {
        let result = bin()
            .args([
                "eval", "--checkpoint", &ckpt, "--data", &data, "--mode", mode, "--out",
                &ws.path("eval"),
            ])
            .output()
            .unwrap();
        assert_success(&result);
    }
    let result = bin()
        .args([
            "eval",
            "--checkpoint",
            &ckpt,
            "--data",
            &data,
            "--mode",
            "switched:ind-aid",
            "--aid-checkpoint",
            &aid_ckpt,
            "--baseline-per",
            "50.0",
            "--out",
            &ws.path("eval-ind"),
        ])
        .output()
        .unwrap();
    assert_success(&result);
    let csv = fs::read_to_string(ws.path("eval-ind/eval.csv")).unwrap();
    assert!(csv.starts_with("metric,value\n"));
    assert!(csv.contains("relative_improvement_pct,"));

    // switched:ind-aid without the classifier checkpoint is a usage error.
    let result = bin()
        .args([
            "eval",
            "--checkpoint",
            &ckpt,
            "--data",
            &data,
            "--mode",
            "switched:ind-aid",
            "--out",
            &ws.path("eval-bad"),
        ])
        .output()
        .unwrap();
    assert_failure(&result, 1);

    // A head-only model cannot drive its own switch.
    let result = bin()
        .args([
            "train", "--model", "mtlp", "--data", &data, "--config", &ws.config(), "--out",
            &ws.path("mtlp"),
        ])
        .output()
        .unwrap();
    assert_success(&result);
    let result = bin()
        .args([
            "eval",
            "--checkpoint",
            &ws.path("mtlp/checkpoint.aam"),
            "--data",
            &data,
            "--mode",
            "switched:joint",
            "--out",
            &ws.path("eval-mtlp"),
        ])
        .output()
        .unwrap();
    assert_failure(&result, 1);
}

#[test]
fn sweep_writes_one_row_per_alpha() {
    let ws = Workspace::new();
    let data = ws.gen_data();
    let result = bin()
        .args([
            "sweep", "--data", &data, "--config", &ws.config(), "--alpha", "0.5", "--out",
            &ws.path("sweep"),
        ])
        .output()
        .unwrap();
    assert_success(&result);
    let csv = fs::read_to_string(ws.path("sweep/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("alpha,per_oracle,per_switched,aid_acc,error"));
    assert_eq!(lines.count(), 1);
}

#[test]
fn bad_flag_is_a_usage_error_and_help_succeeds() {
    let result = bin().args(["gen-data", "--no-such-flag"]).output().unwrap();
    assert_failure(&result, 1);
    let result = bin().args(["--help"]).output().unwrap();
    assert_success(&result);
}

use std::path::Path;
use std::process::{Command, Output};

fn taskvec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskvec"))
        .args(args)
        .env_remove("TASKVEC_OUTPUT_ROOT")
        .output()
        .unwrap()
}

const TINY: &str = r#"
[model]
n_layers = 2
d_model = 16
n_heads = 2
d_ff = 32
max_seq_len = 96

[training]
log_every = 0

[training.base_mixture]
transplant_layers = [1]

[training.fine_tune_mixture]
transplant_layers = [1]

[training.base]
steps = 3
batch_size = 4

[training.fine_tune_hparams]
steps = 2
batch_size = 4

[experiments]
eval_seeds = [0]
max_queries = 2
ensemble_ns = [1, 5]
rep_draws = 2
cluster_per_group = 3
overhead_examples = 4
overhead_reps = 2
"#;

fn write_config(dir: &Path) -> String {
    let out = dir.join("run");
    let text = format!("{TINY}\n[output]\ndir = {:?}\n", out.to_str().unwrap());
    let path = dir.join("tiny.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_experiment_is_a_usage_error_listing_the_names() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = taskvec(&["eval", "--config", &cfg, "--experiment", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["transfer", "sweep", "llm-vlm", "rep-evolution", "noise"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(taskvec(&["train", "--config", "/no/such/file.toml"]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nwidth = 3\n").unwrap();
    assert_eq!(taskvec(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(taskvec(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn dry_run_prints_the_resolved_config_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = taskvec(&["train", "--config", &cfg, "--dry-run"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("config hash"));
    assert!(text.contains("n_layers = 2"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn eval_without_checkpoints_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = taskvec(&["eval", "--config", &cfg, "--experiment", "transfer"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("taskvec train"));
}

#[test]
fn train_eval_report_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("run");
    assert_eq!(taskvec(&["train", "--config", &cfg]).status.code(), Some(0));
    assert!(run.join("checkpoints/base.ckpt").exists());
    assert!(run.join("checkpoints/tuned.ckpt").exists());
    assert!(run.join("suite.json").exists());

    for exp in ["transfer", "ensemble", "noise"] {
        let out = taskvec(&["eval", "--config", &cfg, "--experiment", exp]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    // Transfer needed a layer, so the sweep was run and stored.
    assert!(run.join("results/sweep.json").exists());
    let first = std::fs::read(run.join("results/transfer.json")).unwrap();
    assert_eq!(taskvec(&["eval", "--config", &cfg, "--experiment", "transfer"]).status.code(), Some(0));
    assert_eq!(first, std::fs::read(run.join("results/transfer.json")).unwrap());

    let out = taskvec(&["report", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let report = std::fs::read_to_string(run.join("report.md")).unwrap();
    assert!(report.contains("## transfer") && report.contains("## sweep"));
    assert_eq!(taskvec(&["report", "--config", &cfg]).status.code(), Some(0));
    assert_eq!(report, std::fs::read_to_string(run.join("report.md")).unwrap());
}

#[test]
fn output_root_variable_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let elsewhere = dir.path().join("elsewhere");
    let out = Command::new(env!("CARGO_BIN_EXE_taskvec"))
        .args(["train", "--config", &cfg, "--dry-run"])
        .env("TASKVEC_OUTPUT_ROOT", &elsewhere)
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains(elsewhere.to_str().unwrap()));
}

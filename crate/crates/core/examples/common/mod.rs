//! Shared setup for the examples. With a run directory argument the trained
//! checkpoints from `taskvec train` are used; otherwise a small model is
//! trained on the spot, which takes a minute and gives modest accuracies.

#![allow(dead_code)]

use std::path::Path;

use taskvec::cli::{base_checkpoint_path, train_checkpoints, tuned_checkpoint_path};
use taskvec::config::CliConfig;
use taskvec::harness::RunConfig;
use taskvec::model::{load_checkpoint, Checkpoint};
use taskvec::tasks::{build_task_suite, TaskSuite};

pub const QUICK: &str = r#"
[model]
n_layers = 4
d_model = 48
n_heads = 4
d_ff = 192
max_seq_len = 96

[training]
log_every = 100

[training.base]
steps = 400
lr = 1e-3

[training.base_mixture]
transplant_layers = [2]

[training.fine_tune_hparams]
steps = 150
lr = 1e-3

[training.fine_tune_mixture]
transplant_layers = [2]

[experiments]
eval_seeds = [0]
max_queries = 8
"#;

pub struct Setup {
    pub suite: TaskSuite,
    pub base: Checkpoint,
    pub tuned: Checkpoint,
    pub run: RunConfig,
}

pub fn setup() -> Setup {
    let cfg = CliConfig::from_toml(QUICK).expect("quick config");
    let suite = build_task_suite(&cfg.suite).expect("suite");
    let mut run = cfg.run_config();
    let (base, tuned) = match std::env::args().nth(1) {
        Some(dir) => {
            let dir = Path::new(&dir);
            let load = |p: std::path::PathBuf| load_checkpoint(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            run.layer = stored_sweep_layer(dir);
            (load(base_checkpoint_path(dir)), load(tuned_checkpoint_path(dir)))
        }
        None => {
            eprintln!("no run directory given; training a small model");
            run.layer = Some(2);
            train_checkpoints(&cfg, &suite).expect("training")
        }
    };
    Setup { suite, base, tuned, run }
}

/// Layer chosen by an earlier `taskvec eval --experiment sweep` in `dir`.
fn stored_sweep_layer(dir: &Path) -> Option<usize> {
    let text = std::fs::read_to_string(dir.join("results/sweep.json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v["results"]["selected_layer"].as_u64().map(|l| l as usize)
}

impl Setup {
    /// The configured patch layer, or the middle of the model.
    pub fn layer(&self) -> usize {
        self.run.layer.unwrap_or(self.tuned.config().n_layers / 2)
    }
}

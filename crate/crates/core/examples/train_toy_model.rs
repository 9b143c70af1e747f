//! Trains the small base and image-tuned models and saves them in the
//! layout `taskvec train` uses, so other examples can load them.
//!
//!     cargo run --release --example train_toy_model -- /tmp/toy-run

mod common;

use std::path::PathBuf;

use taskvec::cli::{base_checkpoint_path, train_checkpoints, tuned_checkpoint_path};
use taskvec::config::CliConfig;
use taskvec::model::save_checkpoint;
use taskvec::tasks::build_task_suite;

fn main() -> taskvec::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "toy-run".into()));
    let cfg = CliConfig::from_toml(common::QUICK)?;
    let suite = build_task_suite(&cfg.suite)?;
    let (base, tuned) = train_checkpoints(&cfg, &suite)?;
    save_checkpoint(&base, base_checkpoint_path(&out))?;
    save_checkpoint(&tuned, tuned_checkpoint_path(&out))?;
    println!("base  {} ({} steps)", base.id(), base.meta().steps);
    println!("tuned {} (parent {:?})", tuned.id(), tuned.meta().parent_id);
    println!("saved under {}", out.display());
    Ok(())
}

//! Saves a model and a task vector, loads them back and checks that nothing
//! changed.
//!
//!     cargo run --release --example checkpoint_round_trip

use taskvec::intervention::{extract_task_vector, load_task_vector, save_task_vector};
use taskvec::model::{load_checkpoint, save_checkpoint, Checkpoint, Model, ModelConfig, TrainingMeta};
use taskvec::tasks::{build_task_suite, render_prompt, Specification, SuiteConfig, Template};

fn main() -> taskvec::Result<()> {
    let suite = build_task_suite(&SuiteConfig::default())?;
    let cfg = ModelConfig {
        vocab_size: suite.vocab.size(),
        ..ModelConfig::default()
    };
    let ckpt = Checkpoint::new(Model::new(cfg)?, TrainingMeta::default())?;
    let dir = std::env::temp_dir().join("taskvec-round-trip");
    std::fs::create_dir_all(&dir).expect("temp dir");

    let path = dir.join("model.ckpt");
    save_checkpoint(&ckpt, &path)?;
    let back = load_checkpoint(&path)?;
    println!("checkpoint {} -> {} ({} bytes)", ckpt.id(), back.id(), ckpt.to_bytes()?.len());

    let spec = Specification::instruction(&suite.tasks[2]);
    let prompt = render_prompt(&suite, Some(&spec), None, Template::Generic)?;
    let v = extract_task_vector(&back, &prompt, 4)?;
    let vpath = dir.join("vector.tv");
    save_task_vector(&v, &vpath)?;
    let w = load_task_vector(&vpath)?;
    println!("vector {} equal after reload: {}", w.describe(), v == w);
    assert_eq!(v, w);
    Ok(())
}

//! Time and memory of a full few-shot prompt against a patched bare query.
//!
//!     cargo run --release --example overhead [-- RUN_DIR]

mod common;

use taskvec::harness::overhead_bench;

fn main() -> taskvec::Result<()> {
    let s = common::setup();
    let r = overhead_bench(&s.tuned, &s.suite, &s.run, s.layer())?;
    println!("{} examples, {} reps", r.n_examples, r.reps);
    println!("prompt  {:>4} tokens  {:>9.1} us  {:>8} bytes", r.prompt_tokens, r.prompt_seconds * 1e6, r.prompt_working_set);
    println!("query   {:>4} tokens  {:>9.1} us  {:>8} bytes", r.query_tokens, r.query_seconds * 1e6, r.query_working_set);
    println!("patched {:>4} tokens  {:>9.1} us", r.query_tokens, r.patch_seconds * 1e6);
    println!("extraction, once      {:>9.1} us", r.extraction_seconds * 1e6);
    for w in &r.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

//! Vectors from the text-only base model patched into the image-tuned model,
//! and how closely the two models' vectors for the same prompt agree.
//!
//!     cargo run --release --example base_to_tuned_transfer [-- RUN_DIR]

mod common;

use taskvec::harness::llm_vlm_transfer_eval;

fn main() -> taskvec::Result<()> {
    let s = common::setup();
    let r = llm_vlm_transfer_eval(&s.base, &s.tuned, &s.suite, &s.run, s.layer())?;
    println!("layer {}  {} vector pairs", r.layer, r.n_vectors);
    println!("cosine, same prompt        {:.3}", r.matched_cosine);
    println!("cosine, different task     {:.3}", r.mismatched_cosine);
    println!("base vector patched        {:.3}", r.patch_accuracy);
    println!("no context                 {:.3}", r.no_context_accuracy);
    Ok(())
}

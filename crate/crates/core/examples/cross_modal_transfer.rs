//! The transfer table: text and image specifications, as prompts and as
//! patched vectors, against text and image queries.
//!
//!     cargo run --release --example cross_modal_transfer [-- RUN_DIR]

mod common;

use taskvec::harness::run_transfer_eval;

fn main() -> taskvec::Result<()> {
    let s = common::setup();
    let rows = run_transfer_eval(&s.tuned, &s.suite, &s.run, s.layer())?;
    println!("{:<26} {:<6} {:>8}", "method", "query", "accuracy");
    for r in rows.iter().filter(|r| r.task_id.is_none()) {
        println!("{:<26} {:<6} {:>8.3}", r.method, r.query_modality.label(), r.accuracy_mean);
    }
    Ok(())
}

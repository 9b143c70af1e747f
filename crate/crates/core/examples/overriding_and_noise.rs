//! Patches one task's instruction vector into another task's prompt, and
//! patches instruction vectors built from shuffled instructions.
//!
//!     cargo run --release --example overriding_and_noise [-- RUN_DIR]

mod common;

use taskvec::harness::{noise_eval, overriding_eval};

fn main() -> taskvec::Result<()> {
    let s = common::setup();
    let layer = s.layer();
    for r in overriding_eval(&s.tuned, &s.suite, &s.run, layer)? {
        println!(
            "{:<26} override {:.3}  original {:.3}  ({} judged, {} skipped)",
            r.condition, r.success_rate, r.original_rate, r.n_judged, r.n_skipped
        );
    }
    for r in noise_eval(&s.tuned, &s.suite, &s.run, layer)? {
        println!("swaps {}  {:<20} {:.3}", r.swaps, r.method, r.accuracy_mean);
    }
    Ok(())
}

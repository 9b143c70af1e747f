//! Patch accuracy of text-example vectors at every layer, on the validation
//! split. The best layer is what `eval` uses when none is configured.
//!
//!     cargo run --release --example layer_sweep [-- RUN_DIR]

mod common;

use taskvec::harness::layer_sweep;

fn main() -> taskvec::Result<()> {
    let s = common::setup();
    let sweep = layer_sweep(&s.tuned, &s.suite, &s.run)?;
    for (l, a) in sweep.layers.iter().zip(&sweep.accuracy) {
        println!("layer {l:>2}  {a:.3}  {}", "#".repeat((a * 40.0).round() as usize));
    }
    println!("selected layer {}", sweep.selected_layer);
    Ok(())
}

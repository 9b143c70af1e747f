//! Compares the hand-written backward pass with finite differences in
//! double precision.
//!
//!     cargo run --release --example gradient_check

use taskvec::model::{gradient_check, LossExample, ModelConfig};

fn main() {
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 4,
        d_ff: 32,
        vocab_size: 29,
        max_seq_len: 16,
        seed: 11,
        ..ModelConfig::default()
    };
    let a = [4usize, 0, 7, 2, 3, 1, 2, 9];
    let b = [5usize, 5, 28, 0, 1];
    let batch = [
        LossExample {
            ids: &a,
            targets: vec![None, None, None, None, None, None, None, Some(9)],
        },
        LossExample {
            ids: &b,
            targets: vec![Some(5), Some(28), Some(0), Some(1), None],
        },
    ];
    for seed in 0..3 {
        let r = gradient_check(&cfg, &batch, 200, 1e-3, seed);
        println!("seed {seed}: {} parameters, max relative error {:.2e}", r.checked, r.max_relative_error);
    }
}

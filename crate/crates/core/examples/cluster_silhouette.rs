//! Task vectors from many prompts, scored by how well they cluster by task
//! and by specification modality.
//!
//!     cargo run --release --example cluster_silhouette [-- RUN_DIR]

mod common;

use taskvec::harness::{cluster_separation, cluster_vectors};

fn main() -> taskvec::Result<()> {
    let s = common::setup();
    let vectors = cluster_vectors(&s.tuned, &s.suite, &s.run, s.layer())?;
    let report = cluster_separation(&vectors)?;
    println!("{} vectors at layer {}", vectors.len(), report.layer);
    println!("silhouette by task      {:+.3}", report.task_silhouette);
    println!("silhouette by modality  {:+.3}", report.modality_silhouette);
    for ((t, m), xy) in report.task_ids.iter().zip(&report.modalities).zip(&report.projection).take(12) {
        println!("  task {t} {:<5} ({:+.2}, {:+.2})", m.label(), xy[0], xy[1]);
    }
    Ok(())
}

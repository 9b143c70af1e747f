//! Averages a text-example vector with an instruction vector and compares
//! the three as the number of examples grows.
//!
//!     cargo run --release --example ensemble_instructions [-- RUN_DIR]

mod common;

use taskvec::harness::ensemble_curve;
use taskvec::intervention::{cosine_similarity, ensemble_vectors, extract_task_vector};
use taskvec::tasks::{render_prompt, Specification, Template};

fn main() -> taskvec::Result<()> {
    let s = common::setup();
    let layer = s.layer();

    // Averaging a vector with itself gives the vector back.
    let spec = Specification::instruction(&s.suite.tasks[0]);
    let prompt = render_prompt(&s.suite, Some(&spec), None, Template::Generic)?;
    let v = extract_task_vector(&s.tuned, &prompt, layer)?;
    let twice = ensemble_vectors(&[v.clone(), v.clone()], None)?;
    println!("cos(ensemble(v, v), v) = {:.6}", cosine_similarity(&twice, &v)?);

    let curve = ensemble_curve(&s.tuned, &s.suite, &s.run, layer)?;
    println!("{:>2} {:>9} {:>12} {:>9}", "n", "examples", "instruction", "ensemble");
    for p in &curve.points {
        println!("{:>2} {:>9.3} {:>12.3} {:>9.3}", p.n, p.examples_mean, p.instruction_mean, p.ensemble_mean);
    }
    Ok(())
}

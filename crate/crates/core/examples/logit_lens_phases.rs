//! Decodes the delimiter activation of an instruction prompt at every layer
//! and tracks the colon the delimiter starts as, the task's attribute token
//! and the answer.
//!
//!     cargo run --release --example logit_lens_phases [-- RUN_DIR]

mod common;

use taskvec::harness::rep_evolution_report;
use taskvec::intervention::{phase_profile, PhaseTriplet};
use taskvec::tasks::{render_prompt, Modality, Query, Specification, Template, COLON};

fn main() -> taskvec::Result<()> {
    let s = common::setup();
    let v = &s.suite.vocab;
    let (t, c) = (1, 3);
    let spec = Specification::instruction(&s.suite.tasks[t]);
    let prompt = render_prompt(&s.suite, Some(&spec), Some(Query::new(c, Modality::Text)), Template::Generic)?;
    let triplet = PhaseTriplet::new(COLON, v.attribute_token(t), s.suite.label(t, c))?;
    println!("layer  p(input) p(task) p(answer)");
    for (l, p) in phase_profile(&s.tuned, &prompt, &triplet)?.iter().enumerate() {
        println!("{l:>5}  {:>8.3} {:>7.3} {:>9.3}", p[0], p[1], p[2]);
    }

    let report = rep_evolution_report(&s.tuned, &s.suite, &s.run)?;
    for curve in &report.curves {
        println!(
            "task {} {:<5}: {} / {} correct, boundaries {:?}",
            curve.task_id,
            curve.modality.label(),
            curve.n_correct,
            curve.n_draws,
            curve.boundaries
        );
    }
    Ok(())
}

//! Extracts a task vector from a text few-shot prompt and patches it into a
//! bare image query.
//!
//!     cargo run --release --example extract_and_patch [-- RUN_DIR]

mod common;

use taskvec::intervention::{extract_task_vector, generate, patch_generate, PatchPlan};
use taskvec::tasks::{render_prompt, sample_specification, seeded_rng, split_pool, Format, Modality, Query, Template};

fn main() -> taskvec::Result<()> {
    let s = common::setup();
    let layer = s.layer();
    println!("patching at layer {layer}");
    let mut rng = seeded_rng(7, &[]);
    for (t, task) in s.suite.tasks.iter().enumerate() {
        let (_, test) = split_pool(task, 0)?;
        let c = test.concepts[0];
        let spec = sample_specification(&s.suite, t, Modality::Text, Format::Examples, 5, &test.concepts, c, &mut rng)?;
        let source = render_prompt(&s.suite, Some(&spec), None, Template::Generic)?;
        let v = extract_task_vector(&s.tuned, &source, layer)?;
        let query = render_prompt(&s.suite, None, Some(Query::new(c, Modality::Image)), Template::BareQuery)?;
        let clean = generate(&s.tuned, &query.tokens, 1)?;
        let patched = patch_generate(&s.tuned, &query, &PatchPlan::at_delimiter(v, &query), 1)?;
        let name = |id: usize| s.suite.vocab.name(id).to_string();
        println!(
            "{:<14} unpatched -> {:<10} patched -> {:<10} expected {}",
            task.name,
            name(clean[0]),
            name(patched[0]),
            name(s.suite.label(t, c)),
        );
    }
    Ok(())
}

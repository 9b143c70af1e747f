//! Builds the synthetic task suite, prints its tasks and a rendered prompt,
//! and writes the suite with its splits to JSON.
//!
//!     cargo run --example suite_export [-- OUT.json]

use taskvec::tasks::{
    build_task_suite, render_prompt, sample_specification, seeded_rng, split_pool, Format, Modality, Query,
    SuiteConfig, Template,
};

fn main() -> taskvec::Result<()> {
    let suite = build_task_suite(&SuiteConfig::default())?;
    println!("{} concepts, vocabulary of {}", suite.n_concepts(), suite.vocab.size());
    let mut splits = Vec::new();
    for t in &suite.tasks {
        let (val, test) = split_pool(t, 0)?;
        println!("{:<14} {:>2} labels  val {:>3}  test {:>3}", t.name, t.n_labels, val.concepts.len(), test.concepts.len());
        splits.extend([val, test]);
    }

    let (_, test) = split_pool(&suite.tasks[0], 0)?;
    let q = test.concepts[0];
    let mut rng = seeded_rng(0, &[]);
    let spec = sample_specification(&suite, 0, Modality::Image, Format::Examples, 2, &test.concepts, q, &mut rng)?;
    let p = render_prompt(&suite, Some(&spec), Some(Query::new(q, Modality::Text)), Template::Generic)?;
    let words: Vec<&str> = p.tokens.ids().iter().map(|&id| suite.vocab.name(id)).collect();
    println!("{}", words.join(" "));
    println!("delimiter at {}", p.delimiter_index);

    let out = std::env::args().nth(1).unwrap_or_else(|| "suite.json".into());
    suite.export(&splits, None, &out)?;
    println!("wrote {out}");
    Ok(())
}

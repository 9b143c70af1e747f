use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{splits, RunConfig, Subject};
use crate::error::{Error, Result};
use crate::intervention::PatchPlan;
use crate::model::{Checkpoint, ModelConfig};
use crate::tasks::{render_prompt, sample_specification, seeded_rng, Format, Modality, Query, TaskSuite, Template};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub n_examples: usize,
    pub reps: usize,
    pub prompt_tokens: usize,
    pub query_tokens: usize,
    /// Mean wall-clock seconds per forward.
    pub prompt_seconds: f64,
    pub patch_seconds: f64,
    pub query_seconds: f64,
    /// One-off cost of extracting the vector, amortised over all queries.
    pub extraction_seconds: f64,
    /// Bytes of activation buffers a forward of each length allocates.
    pub prompt_working_set: usize,
    pub query_working_set: usize,
    pub warnings: Vec<String>,
}

/// Bytes allocated for activations and caches by one forward pass over
/// `len` tokens.
pub fn working_set_bytes(cfg: &ModelConfig, len: usize) -> usize {
    let (d, ff, h, l, v) = (cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.n_layers, cfg.vocab_size);
    let per_block = len * (d * 6 + 3 * d + 2 * ff + 4) + h * len * len;
    4 * ((l + 1) * len * d + l * per_block + len * (2 * d + v))
}

/// Times a full few-shot forward, a patched bare-query forward and a plain
/// bare-query forward, interleaved so drift affects all three equally.
pub fn overhead_bench(ckpt: &Checkpoint, suite: &TaskSuite, cfg: &RunConfig, layer: usize) -> Result<OverheadReport> {
    cfg.validate()?;
    if cfg.overhead_reps == 0 {
        return Err(Error::Config("overhead_reps must be at least 1".into()));
    }
    let (_, test) = &splits(suite, cfg)?[0];
    let c = test.concepts[0];
    let pool: Vec<usize> = (0..suite.n_concepts()).collect();
    let mut rng = seeded_rng(cfg.eval_seeds[0], &[7]);
    let spec = sample_specification(suite, 0, Modality::Text, Format::Examples, cfg.overhead_examples, &pool, c, &mut rng)?;
    let qm = cfg.probe_query_modality;
    let full = render_prompt(suite, Some(&spec), Some(Query::new(c, qm)), Template::Generic)?;
    let spec_only = render_prompt(suite, Some(&spec), None, Template::Generic)?;
    let query = render_prompt(suite, None, Some(Query::new(c, qm)), Template::BareQuery)?;

    let t = Instant::now();
    let v = ckpt.extract_all(&spec_only)?.swap_remove(layer);
    let extraction = t.elapsed();
    let plan = PatchPlan::at_delimiter(v, &query);

    let mut totals = [Duration::ZERO; 3];
    for rep in 0..cfg.overhead_reps + 5 {
        let runs: [&dyn Fn() -> Result<Vec<usize>>; 3] = [
            &|| ckpt.generate(&full.tokens, None, 1),
            &|| ckpt.generate(&query.tokens, Some(&plan), 1),
            &|| ckpt.generate(&query.tokens, None, 1),
        ];
        // Alternate which short forward runs right after the long prompt has
        // flushed the caches.
        let order = if rep % 2 == 0 { [0, 1, 2] } else { [0, 2, 1] };
        for i in order {
            let t = Instant::now();
            std::hint::black_box(runs[i]()?);
            if rep >= 5 {
                totals[i] += t.elapsed();
            }
        }
    }
    let per = |d: Duration| d.as_secs_f64() / cfg.overhead_reps as f64;
    let mut warnings = Vec::new();
    if per(totals[2]) < 1e-5 {
        warnings.push("query forward is close to timer resolution; ratios are noisy".into());
    }
    Ok(OverheadReport {
        n_examples: cfg.overhead_examples,
        reps: cfg.overhead_reps,
        prompt_tokens: full.tokens.len(),
        query_tokens: query.tokens.len(),
        prompt_seconds: per(totals[0]),
        patch_seconds: per(totals[1]),
        query_seconds: per(totals[2]),
        extraction_seconds: extraction.as_secs_f64(),
        prompt_working_set: working_set_bytes(ckpt.config(), full.tokens.len()),
        query_working_set: working_set_bytes(ckpt.config(), query.tokens.len()),
        warnings,
    })
}

//! Synthetic cross-modal tasks, specifications, prompt rendering and
//! training episodes.

mod episodes;
mod render;
mod spec;
mod suite;

pub use episodes::{EpisodeStream, MixtureWeights};
pub use render::{build_override_pair, render_prompt, OverridePair, PromptMeta, Query, RenderedPrompt, Template};
pub use spec::{
    inject_noise, majority_baseline, sample_specification, split_pool, split_sizes, swap_at, Example, Format, Modality,
    Specification, Split, SplitKind, DEFAULT_N_EXAMPLES,
};
pub use suite::{build_task_suite, SuiteConfig, TaskDef, TaskSuite, Vocab, A, BLANK, COLON, NEWLINE, Q};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// An RNG for one named stream derived from a base seed, so that adding a
/// consumer never shifts the draws of another.
pub fn seeded_rng(seed: u64, stream: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for s in stream {
        h.update(s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

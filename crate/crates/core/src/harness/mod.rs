//! Seeded experiments over trained checkpoints.

mod analysis;
mod output;
mod overhead;
mod transfer;

pub use analysis::{
    cluster_separation, cluster_vectors, principal_projection, rep_evolution_report, silhouette, ClusterReport, PhaseCurve,
    RepEvolutionReport,
};
pub use output::{config_hash, write_csv, write_json, write_svg_lines, LineSeries};
pub use overhead::{overhead_bench, OverheadReport};
pub use transfer::{
    ensemble_curve, layer_sweep, llm_vlm_transfer_eval, mismatched_cosine_mean, noise_eval, overriding_eval,
    run_transfer_eval, EnsembleCurve, EnsemblePoint, LlmVlmReport, NoiseRow, OverrideRow, SweepResult,
};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::{extract_all_layers, PatchPlan, TaskVector};
use crate::model::{greedy_generate, Checkpoint, GenerateOptions, HookPoint, TokenSequence};
use crate::tasks::{
    sample_specification, seeded_rng, split_pool, Format, Modality, RenderedPrompt, Specification, Split, SplitKind,
    SuiteConfig, TaskSuite,
};

/// Anything that can be prompted, patched and read from. Implemented by
/// checkpoints; tests substitute lookup oracles.
pub trait Subject {
    fn id(&self) -> &str;
    fn n_layers(&self) -> usize;
    /// Greedy continuation of `tokens` (new tokens only), optionally with a
    /// patch applied.
    fn generate(&self, tokens: &TokenSequence, patch: Option<&PatchPlan>, max_new: usize) -> Result<Vec<usize>>;
    /// Delimiter activations for layers `0..=n_layers`.
    fn extract_all(&self, prompt: &RenderedPrompt) -> Result<Vec<TaskVector>>;
}

impl Subject for Checkpoint {
    fn id(&self) -> &str {
        Checkpoint::id(self)
    }

    fn n_layers(&self) -> usize {
        self.config().n_layers
    }

    fn generate(&self, tokens: &TokenSequence, patch: Option<&PatchPlan>, max_new: usize) -> Result<Vec<usize>> {
        let hooks: Vec<HookPoint> = patch
            .map(|p| HookPoint::replace(p.vector.layer, p.target_position, p.vector.values.clone()))
            .into_iter()
            .collect();
        let out = greedy_generate(self.model(), tokens, &hooks, GenerateOptions::new(max_new))?;
        Ok(out.ids()[tokens.len()..].to_vec())
    }

    fn extract_all(&self, prompt: &RenderedPrompt) -> Result<Vec<TaskVector>> {
        extract_all_layers(self, prompt)
    }
}

/// Seeded description of an evaluation run. Checkpoint locations live in
/// the command-line config; everything here is data-independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Not serialised: configuration files carry the suite in its own section.
    #[serde(skip)]
    pub suite: SuiteConfig,
    pub split_seed: u64,
    /// Seeds controlling specification sampling.
    pub eval_seeds: Vec<u64>,
    pub n_examples: usize,
    pub spec_modalities: Vec<Modality>,
    pub query_modalities: Vec<Modality>,
    /// Fixed patch layer; `None` means "use the sweep result".
    pub layer: Option<usize>,
    /// Candidate layers for the sweep; empty means every layer.
    pub sweep_layers: Vec<usize>,
    pub max_new: usize,
    pub case_insensitive: bool,
    /// Cap on queries per task and split; `None` uses the whole split.
    pub max_queries: Option<usize>,
    /// Query modality for the ensemble, override and noise experiments.
    pub probe_query_modality: Modality,
    pub ensemble_ns: Vec<usize>,
    pub rep_draws: usize,
    pub cluster_per_group: usize,
    pub overhead_examples: usize,
    pub overhead_reps: usize,
    pub noise_swaps: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            suite: SuiteConfig::default(),
            split_seed: 0,
            eval_seeds: vec![0, 1, 2],
            n_examples: crate::tasks::DEFAULT_N_EXAMPLES,
            spec_modalities: Modality::ALL.to_vec(),
            query_modalities: Modality::ALL.to_vec(),
            layer: None,
            sweep_layers: Vec::new(),
            max_new: 1,
            case_insensitive: false,
            max_queries: None,
            probe_query_modality: Modality::Image,
            ensemble_ns: vec![1, 2, 3, 4, 5],
            rep_draws: 100,
            cluster_per_group: 10,
            overhead_examples: 30,
            overhead_reps: 100,
            noise_swaps: vec![0, 1, 2],
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_seeds.is_empty() {
            return Err(Error::Config("eval_seeds must not be empty".into()));
        }
        if self.n_examples == 0 {
            return Err(Error::Config("n_examples must be at least 1".into()));
        }
        if self.max_new == 0 {
            return Err(Error::Config("max_new must be at least 1".into()));
        }
        if self.spec_modalities.is_empty() || self.query_modalities.is_empty() {
            return Err(Error::Config("modality grid must not be empty".into()));
        }
        Ok(())
    }
}

/// One cell of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub query_modality: Modality,
    /// `None` for the mean over tasks.
    pub task_id: Option<usize>,
    pub accuracy_mean: f64,
    pub accuracy_per_seed: Vec<f64>,
    pub n_queries: usize,
}

/// Fraction of outputs whose first token is the label. Labels are single
/// tokens, so case folding has nothing to fold and the flag is accepted
/// for parity only.
pub fn first_token_accuracy(outputs: &[Vec<usize>], labels: &[usize], _case_insensitive: bool) -> Result<f64> {
    if outputs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: outputs.len(),
        });
    }
    if outputs.is_empty() {
        return Err(Error::Empty("no outputs to score"));
    }
    let hits = outputs
        .iter()
        .zip(labels)
        .filter(|(o, &l)| o.first() == Some(&l))
        .count();
    Ok(hits as f64 / outputs.len() as f64)
}

/// Splits of every task, tagged by kind.
pub(crate) fn splits(suite: &TaskSuite, cfg: &RunConfig) -> Result<Vec<(Split, Split)>> {
    suite.tasks.iter().map(|t| split_pool(t, cfg.split_seed)).collect()
}

pub(crate) fn queries<'a>(split: &'a Split, cfg: &RunConfig) -> &'a [usize] {
    let n = cfg.max_queries.map_or(split.concepts.len(), |m| m.min(split.concepts.len()));
    &split.concepts[..n]
}

/// The specification for one (seed, task, query, n) cell. The draw does not
/// depend on modality, so text and image specifications of a cell show the
/// same concepts.
pub(crate) fn draw_spec(
    suite: &TaskSuite,
    seed: u64,
    split: &Split,
    query: usize,
    n: usize,
    modality: Modality,
) -> Result<Specification> {
    let mut rng: ChaCha8Rng = seeded_rng(seed, &[4, split.task_id as u64, query as u64, n as u64, kind_tag(split.kind)]);
    sample_specification(suite, split.task_id, modality, Format::Examples, n, &split.concepts, query, &mut rng)
}

fn kind_tag(kind: SplitKind) -> u64 {
    match kind {
        SplitKind::Validation => 0,
        SplitKind::Test => 1,
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance.
pub(crate) fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_fractions() {
        let labels = [1, 2, 3, 4];
        let all: Vec<Vec<usize>> = labels.iter().map(|&l| vec![l, 0]).collect();
        assert_eq!(first_token_accuracy(&all, &labels, false).unwrap(), 1.0);
        let none: Vec<Vec<usize>> = labels.iter().map(|&l| vec![l + 10]).collect();
        assert_eq!(first_token_accuracy(&none, &labels, true).unwrap(), 0.0);
        let three = vec![vec![1], vec![2], vec![3], vec![]];
        assert_eq!(first_token_accuracy(&three, &labels, false).unwrap(), 0.75);
        assert!(first_token_accuracy(&[], &[], false).is_err());
        assert!(first_token_accuracy(&three, &labels[..2], false).is_err());
    }

    #[test]
    fn spec_draw_is_modality_independent() {
        let suite = crate::tasks::build_task_suite(&SuiteConfig::default()).unwrap();
        let cfg = RunConfig::default();
        let (_, test) = &splits(&suite, &cfg).unwrap()[2];
        let q = test.concepts[0];
        let a = draw_spec(&suite, 1, test, q, 5, Modality::Text).unwrap();
        let b = draw_spec(&suite, 1, test, q, 5, Modality::Image).unwrap();
        assert_eq!(a.examples, b.examples);
        assert_ne!(a, draw_spec(&suite, 2, test, q, 5, Modality::Text).unwrap());
    }
}

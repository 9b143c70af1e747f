//! Harness behaviour against a lookup oracle that knows every task mapping.
//! Prompting and patching must both score 1.0 for it, and the baselines must
//! behave as their definitions say.

use taskvec::harness::{
    cluster_separation, cluster_vectors, ensemble_curve, layer_sweep, llm_vlm_transfer_eval, noise_eval,
    overriding_eval, run_transfer_eval, RunConfig, Subject,
};
use taskvec::intervention::{PatchPlan, TaskVector};
use taskvec::model::TokenSequence;
use taskvec::tasks::{build_task_suite, Format, Modality, RenderedPrompt, SuiteConfig, TaskSuite, BLANK};
use taskvec::Result;

/// Reads the task from the last task-identifying token before the end (a
/// label or an attribute token), or from a one-hot patch, and answers the
/// final query by table lookup.
struct Oracle {
    suite: TaskSuite,
}

impl Oracle {
    fn task_in(&self, ids: &[usize]) -> Option<usize> {
        let v = &self.suite.vocab;
        ids.iter().rev().find_map(|&id| {
            self.suite
                .task_of_label(id)
                .or_else(|| (v.attribute_base..v.attribute_base + self.suite.tasks.len()).contains(&id).then(|| id - v.attribute_base))
        })
    }

    fn concept(&self, id: usize) -> Option<usize> {
        let v = &self.suite.vocab;
        v.text_concept(id).or_else(|| {
            (v.image_base..v.label_base)
                .contains(&id)
                .then(|| (id - v.image_base) / v.image_tokens_per_concept)
        })
    }
}

impl Subject for Oracle {
    fn id(&self) -> &str {
        "oracle"
    }

    fn n_layers(&self) -> usize {
        2
    }

    fn generate(&self, tokens: &TokenSequence, patch: Option<&PatchPlan>, max_new: usize) -> Result<Vec<usize>> {
        let ids = tokens.ids();
        // `... Q : c \n A :`: the concept's last token is three back.
        let concept = self.concept(ids[ids.len() - 4]);
        let task = match patch {
            Some(p) => {
                let v = &p.vector.values;
                let best = (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
                (best < self.suite.tasks.len()).then_some(best)
            }
            None => self.task_in(&ids[..ids.len() - 5]),
        };
        let first = match (task, concept) {
            (Some(t), Some(c)) => self.suite.label(t, c),
            _ => BLANK,
        };
        Ok(std::iter::once(first).chain(std::iter::repeat(BLANK)).take(max_new).collect())
    }

    fn extract_all(&self, prompt: &RenderedPrompt) -> Result<Vec<TaskVector>> {
        let n = self.suite.tasks.len();
        let task = self.task_in(&prompt.tokens.ids()[..=prompt.delimiter_index]);
        (0..=2)
            .map(|l| {
                let mut values = vec![0.0; n + 1];
                match task {
                    Some(t) => values[t] = 1.0,
                    None => values[n] = 0.5,
                }
                let m = prompt.meta.spec_modality.unwrap_or(Modality::Text);
                TaskVector::new(values, l, task, m, Format::Examples, "oracle")
            })
            .collect()
    }
}

fn setup() -> (Oracle, TaskSuite, RunConfig) {
    let suite = build_task_suite(&SuiteConfig::default()).unwrap();
    let cfg = RunConfig {
        eval_seeds: vec![0, 1],
        max_queries: Some(8),
        suite: suite.config.clone(),
        ..RunConfig::default()
    };
    (Oracle { suite: suite.clone() }, suite, cfg)
}

#[test]
fn oracle_scores_one_on_every_prompt_and_patch_cell() {
    let (oracle, suite, cfg) = setup();
    let rows = run_transfer_eval(&oracle, &suite, &cfg, 1).unwrap();
    for r in &rows {
        if r.method.ends_with("-Prompt") || r.method.ends_with("-Patch") {
            assert_eq!(r.accuracy_mean, 1.0, "{} {:?} {:?}", r.method, r.query_modality, r.task_id);
        }
        if r.method == "No-Context" {
            assert_eq!(r.accuracy_mean, 0.0);
        }
        assert_eq!(r.accuracy_per_seed.len(), 2);
    }
    let methods: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    for m in [
        "Text-Examples-Prompt",
        "Text-Examples-Patch",
        "Image-Examples-Prompt",
        "Image-Examples-Patch",
        "Instruction-Prompt",
        "Instruction-Patch",
        "No-Context",
        "Random",
    ] {
        assert!(methods.contains(m), "missing {m}");
    }
}

#[test]
fn majority_baseline_is_between_zero_and_one_and_seed_dependent() {
    let (oracle, suite, cfg) = setup();
    let rows = run_transfer_eval(&oracle, &suite, &cfg, 1).unwrap();
    let random = rows.iter().find(|r| r.method == "Random" && r.task_id.is_none()).unwrap();
    assert!(random.accuracy_mean < 0.9);
}

#[test]
fn transfer_is_reproducible() {
    let (oracle, suite, cfg) = setup();
    assert_eq!(
        run_transfer_eval(&oracle, &suite, &cfg, 1).unwrap(),
        run_transfer_eval(&oracle, &suite, &cfg, 1).unwrap()
    );
}

#[test]
fn sweep_picks_lowest_of_tied_layers() {
    let (oracle, suite, cfg) = setup();
    let sweep = layer_sweep(&oracle, &suite, &cfg).unwrap();
    assert_eq!(sweep.layers, vec![0, 1, 2]);
    assert!(sweep.accuracy.iter().all(|&a| a == 1.0));
    assert_eq!(sweep.selected_layer, 0);
}

#[test]
fn ensemble_n5_matches_transfer_cell() {
    let (oracle, suite, cfg) = setup();
    let curve = ensemble_curve(&oracle, &suite, &cfg, 1).unwrap();
    let rows = run_transfer_eval(&oracle, &suite, &cfg, 1).unwrap();
    let cell = rows
        .iter()
        .find(|r| r.method == "Text-Examples-Patch" && r.query_modality == cfg.probe_query_modality && r.task_id.is_none())
        .unwrap();
    let p5 = curve.points.iter().find(|p| p.n == 5).unwrap();
    assert_eq!(p5.examples_per_seed, cell.accuracy_per_seed);
    // Averaging with the instruction vector recovers the task even when a
    // single example (whose label is cut off) names none.
    assert!(curve.points.iter().all(|p| p.ensemble_mean == 1.0 && p.instruction_mean == 1.0));
    assert_eq!(curve.points[0].examples_mean, 0.0);
}

#[test]
fn override_patch_wins_for_the_oracle() {
    let (oracle, suite, cfg) = setup();
    let rows = overriding_eval(&oracle, &suite, &cfg, 1).unwrap();
    let get = |c: &str| rows.iter().find(|r| r.condition == c).unwrap();
    assert_eq!(get("Original Task").success_rate, 0.0);
    assert_eq!(get("Instruction Patch").success_rate, 1.0);
    // The oracle follows the most recent task cue, which is the system prompt.
    assert_eq!(get("Original + System Prompt").success_rate, 0.0);
}

#[test]
fn noise_rows_start_from_the_clean_run() {
    let (oracle, suite, cfg) = setup();
    let rows = noise_eval(&oracle, &suite, &cfg, 1).unwrap();
    let clean: Vec<_> = rows.iter().filter(|r| r.swaps == 0).collect();
    assert!(!clean.is_empty());
    assert!(clean.iter().all(|r| r.accuracy_mean == 1.0));
}

#[test]
fn llm_vlm_with_identical_subjects_has_unit_matched_cosine() {
    let (oracle, suite, cfg) = setup();
    let r = llm_vlm_transfer_eval(&oracle, &oracle, &suite, &cfg, 1).unwrap();
    assert_eq!(r.matched_cosine, 1.0);
    assert_eq!(r.mismatched_cosine, 0.0);
    assert_eq!(r.patch_accuracy, 1.0);
    assert_eq!(r.no_context_accuracy, 0.0);
}

#[test]
fn oracle_vectors_cluster_by_task() {
    let (oracle, suite, cfg) = setup();
    let vectors = cluster_vectors(&oracle, &suite, &cfg, 1).unwrap();
    let report = cluster_separation(&vectors).unwrap();
    assert!(report.task_silhouette > report.modality_silhouette);
}

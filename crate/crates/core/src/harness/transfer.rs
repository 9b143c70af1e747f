use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{draw_spec, first_token_accuracy, mean, queries, splits, variance, EvalRow, RunConfig, Subject};
use crate::error::{Error, Result};
use crate::intervention::{cosine, ensemble_vectors, PatchPlan, TaskVector};
use crate::tasks::{
    build_override_pair, inject_noise, majority_baseline, render_prompt, seeded_rng, Modality, Query, RenderedPrompt,
    Specification, Split, SplitKind, TaskSuite, Template, BLANK, COLON,
};

/// Generated outputs and their labels.
type Cell = (Vec<Vec<usize>>, Vec<usize>);

/// Outputs and labels collected per (method, query modality, task, seed).
#[derive(Default)]
struct Tally {
    order: Vec<(String, Modality)>,
    cells: BTreeMap<(usize, usize, usize), Cell>,
}

impl Tally {
    fn record(&mut self, method: &str, qm: Modality, task: usize, seed_idx: usize, output: Vec<usize>, label: usize) {
        let key = (method.to_string(), qm);
        let m = match self.order.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                self.order.push(key);
                self.order.len() - 1
            }
        };
        let cell = self.cells.entry((m, task, seed_idx)).or_default();
        cell.0.push(output);
        cell.1.push(label);
    }

    fn rows(&self, n_tasks: usize, n_seeds: usize, case_insensitive: bool) -> Result<Vec<EvalRow>> {
        let mut rows = Vec::new();
        for (m, (method, qm)) in self.order.iter().enumerate() {
            let mut per_task = Vec::new();
            for t in 0..n_tasks {
                let mut accs = Vec::new();
                let mut n = 0;
                for s in 0..n_seeds {
                    let (outs, labels) = self
                        .cells
                        .get(&(m, t, s))
                        .ok_or_else(|| Error::Experiment(format!("no queries for {method} on task {t}")))?;
                    accs.push(first_token_accuracy(outs, labels, case_insensitive)?);
                    n = labels.len();
                }
                per_task.push(accs.clone());
                rows.push(EvalRow {
                    method: method.clone(),
                    query_modality: *qm,
                    task_id: Some(t),
                    accuracy_mean: mean(&accs),
                    accuracy_per_seed: accs,
                    n_queries: n,
                });
            }
            let per_seed: Vec<f64> = (0..n_seeds)
                .map(|s| mean(&per_task.iter().map(|a| a[s]).collect::<Vec<_>>()))
                .collect();
            let n_total = rows.iter().rev().take(n_tasks).map(|r| r.n_queries).sum();
            rows.push(EvalRow {
                method: method.clone(),
                query_modality: *qm,
                task_id: None,
                accuracy_mean: mean(&per_seed),
                accuracy_per_seed: per_seed,
                n_queries: n_total,
            });
        }
        Ok(rows)
    }
}

fn bare(suite: &TaskSuite, concept: usize, qm: Modality) -> Result<RenderedPrompt> {
    render_prompt(suite, None, Some(Query::new(concept, qm)), Template::BareQuery)
}

fn patched(subject: &impl Subject, query: &RenderedPrompt, v: &TaskVector, max_new: usize) -> Result<Vec<usize>> {
    subject.generate(&query.tokens, Some(&PatchPlan::at_delimiter(v.clone(), query)), max_new)
}

fn vector_at(subject: &impl Subject, prompt: &RenderedPrompt, layer: usize) -> Result<TaskVector> {
    let mut all = subject.extract_all(prompt)?;
    if layer >= all.len() {
        return Err(Error::Experiment(format!(
            "layer {layer} out of range for a {}-layer model",
            all.len() - 1
        )));
    }
    Ok(all.swap_remove(layer))
}

/// Instruction vectors for every task at `layer`.
fn instruction_vectors(subject: &impl Subject, suite: &TaskSuite, layer: usize) -> Result<Vec<TaskVector>> {
    suite
        .tasks
        .iter()
        .map(|t| {
            let p = render_prompt(suite, Some(&Specification::instruction(t)), None, Template::Generic)?;
            vector_at(subject, &p, layer)
        })
        .collect()
}

pub(crate) fn example_method(sm: Modality, kind: &str) -> String {
    format!("{}-Examples-{kind}", sm.label())
}

/// The transfer table on the test split: for each specification modality
/// and query modality, few-shot prompting versus patching the vector
/// extracted from the specification alone, plus instruction rows and the
/// No-Context and majority baselines.
pub fn run_transfer_eval(subject: &impl Subject, suite: &TaskSuite, cfg: &RunConfig, layer: usize) -> Result<Vec<EvalRow>> {
    cfg.validate()?;
    let splits = splits(suite, cfg)?;
    let instr = instruction_vectors(subject, suite, layer)?;
    let mut tally = Tally::default();
    for (si, &seed) in cfg.eval_seeds.iter().enumerate() {
        for (t, (_, test)) in splits.iter().enumerate() {
            let instr_spec = Specification::instruction(&suite.tasks[t]);
            for &c in queries(test, cfg) {
                let label = suite.label(t, c);
                let mut majority = None;
                for &sm in &cfg.spec_modalities {
                    let spec = draw_spec(suite, seed, test, c, cfg.n_examples, sm)?;
                    majority.get_or_insert(majority_baseline(&spec)?);
                    let v = vector_at(subject, &render_prompt(suite, Some(&spec), None, Template::Generic)?, layer)?;
                    for &qm in &cfg.query_modalities {
                        let full = render_prompt(suite, Some(&spec), Some(Query::new(c, qm)), Template::Generic)?;
                        let out = subject.generate(&full.tokens, None, cfg.max_new)?;
                        tally.record(&example_method(sm, "Prompt"), qm, t, si, out, label);
                        let out = patched(subject, &bare(suite, c, qm)?, &v, cfg.max_new)?;
                        tally.record(&example_method(sm, "Patch"), qm, t, si, out, label);
                    }
                }
                for &qm in &cfg.query_modalities {
                    let q = bare(suite, c, qm)?;
                    let full = render_prompt(suite, Some(&instr_spec), Some(Query::new(c, qm)), Template::Generic)?;
                    tally.record("Instruction-Prompt", qm, t, si, subject.generate(&full.tokens, None, cfg.max_new)?, label);
                    tally.record("Instruction-Patch", qm, t, si, patched(subject, &q, &instr[t], cfg.max_new)?, label);
                    tally.record("No-Context", qm, t, si, subject.generate(&q.tokens, None, cfg.max_new)?, label);
                    if let Some(m) = majority {
                        tally.record("Random", qm, t, si, vec![m], label);
                    }
                }
            }
        }
    }
    tally.rows(suite.tasks.len(), cfg.eval_seeds.len(), cfg.case_insensitive)
}

/// Per-layer validation accuracy of example-vector patching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub layers: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub selected_layer: usize,
}

impl SweepResult {
    /// Argmax with ties going to the lowest layer.
    pub fn from_accuracy(layers: Vec<usize>, accuracy: Vec<f64>) -> Result<Self> {
        let mut best: Option<(usize, f64)> = None;
        for (&l, &a) in layers.iter().zip(&accuracy) {
            match best {
                Some((bl, ba)) if a < ba || (a == ba && l > bl) => {}
                _ => best = Some((l, a)),
            }
        }
        let (selected_layer, _) = best.ok_or(Error::Empty("no layers to sweep"))?;
        Ok(Self {
            layers,
            accuracy,
            selected_layer,
        })
    }
}

fn validation_only(split: &Split) -> Result<&Split> {
    if split.kind != SplitKind::Validation {
        return Err(Error::Experiment("layer selection may only read validation data".into()));
    }
    Ok(split)
}

/// Patch accuracy per layer averaged over the specification × query
/// modality grid, on validation queries only.
pub fn layer_sweep(subject: &impl Subject, suite: &TaskSuite, cfg: &RunConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let layers: Vec<usize> = if cfg.sweep_layers.is_empty() {
        (0..=subject.n_layers()).collect()
    } else {
        cfg.sweep_layers.clone()
    };
    if let Some(&bad) = layers.iter().find(|&&l| l > subject.n_layers()) {
        return Err(Error::Experiment(format!("sweep layer {bad} out of range")));
    }
    let mut hits = vec![0usize; layers.len()];
    let mut total = 0usize;
    for &seed in &cfg.eval_seeds {
        for (t, (val, _)) in splits(suite, cfg)?.iter().enumerate() {
            let val = validation_only(val)?;
            for &c in queries(val, cfg) {
                let label = suite.label(t, c);
                for &sm in &cfg.spec_modalities {
                    let spec = draw_spec(suite, seed, val, c, cfg.n_examples, sm)?;
                    let vecs = subject.extract_all(&render_prompt(suite, Some(&spec), None, Template::Generic)?)?;
                    for &qm in &cfg.query_modalities {
                        let q = bare(suite, c, qm)?;
                        total += 1;
                        for (h, &l) in hits.iter_mut().zip(&layers) {
                            let out = patched(subject, &q, &vecs[l], cfg.max_new)?;
                            if out.first() == Some(&label) {
                                *h += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    let accuracy = hits.iter().map(|&h| h as f64 / total.max(1) as f64).collect();
    SweepResult::from_accuracy(layers, accuracy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmVlmReport {
    pub layer: usize,
    pub matched_cosine: f64,
    pub mismatched_cosine: f64,
    pub n_vectors: usize,
    /// Base-model text vectors patched onto the fine-tuned model's queries.
    pub patch_accuracy: f64,
    pub patch_accuracy_per_seed: Vec<f64>,
    pub no_context_accuracy: f64,
    pub query_modality: Modality,
}

fn unit(v: &[f32]) -> Result<Vec<f64>> {
    let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|&x| x as f64 / n).collect())
}

/// Mean cosine between `a[i]` and `b[j]` over all ordered pairs whose task
/// labels differ. Uses per-task sums of unit vectors, so it runs in linear
/// time.
pub fn mismatched_cosine_mean(a: &[(usize, Vec<f32>)], b: &[(usize, Vec<f32>)]) -> Result<f64> {
    let dim = a.first().map(|x| x.1.len()).ok_or(Error::Empty("no vectors"))?;
    let mut sum_a: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    let mut sum_b: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (sums, vs) in [(&mut sum_a, a), (&mut sum_b, b)] {
        for (t, v) in vs {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            let e = sums.entry(*t).or_insert_with(|| (vec![0.0; dim], 0));
            for (acc, x) in e.0.iter_mut().zip(unit(v)?) {
                *acc += x;
            }
            e.1 += 1;
        }
    }
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let (mut total, mut count) = (0.0, 0usize);
    for (ta, (va, na)) in &sum_a {
        for (tb, (vb, nb)) in &sum_b {
            if ta != tb {
                total += dot(va, vb);
                count += na * nb;
            }
        }
    }
    if count == 0 {
        return Err(Error::DegenerateGroups("all vectors share one task".into()));
    }
    Ok(total / count as f64)
}

/// Compares text-example vectors of a base and a fine-tuned checkpoint fed
/// identical prompts, and patches base vectors into the fine-tuned model.
pub fn llm_vlm_transfer_eval(
    base: &impl Subject,
    tuned: &impl Subject,
    suite: &TaskSuite,
    cfg: &RunConfig,
    layer: usize,
) -> Result<LlmVlmReport> {
    cfg.validate()?;
    let qm = cfg.probe_query_modality;
    let mut base_vecs = Vec::new();
    let mut tuned_vecs = Vec::new();
    let mut matched = Vec::new();
    let mut tally = Tally::default();
    for (si, &seed) in cfg.eval_seeds.iter().enumerate() {
        for (t, (_, test)) in splits(suite, cfg)?.iter().enumerate() {
            for &c in queries(test, cfg) {
                let spec = draw_spec(suite, seed, test, c, cfg.n_examples, Modality::Text)?;
                let p = render_prompt(suite, Some(&spec), None, Template::Generic)?;
                let vb = vector_at(base, &p, layer)?;
                let vt = vector_at(tuned, &p, layer)?;
                if vb.dim() != vt.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: vt.dim(),
                        got: vb.dim(),
                    });
                }
                matched.push(cosine(&vb.values, &vt.values)?);
                let q = bare(suite, c, qm)?;
                let label = suite.label(t, c);
                tally.record("Base-Patch", qm, t, si, patched(tuned, &q, &vb, cfg.max_new)?, label);
                tally.record("No-Context", qm, t, si, tuned.generate(&q.tokens, None, cfg.max_new)?, label);
                base_vecs.push((t, vb.values));
                tuned_vecs.push((t, vt.values));
            }
        }
    }
    let rows = tally.rows(suite.tasks.len(), cfg.eval_seeds.len(), cfg.case_insensitive)?;
    let overall = |m: &str| rows.iter().find(|r| r.method == m && r.task_id.is_none()).cloned().unwrap();
    let patch = overall("Base-Patch");
    Ok(LlmVlmReport {
        layer,
        matched_cosine: mean(&matched),
        mismatched_cosine: mismatched_cosine_mean(&base_vecs, &tuned_vecs)?,
        n_vectors: matched.len(),
        patch_accuracy: patch.accuracy_mean,
        patch_accuracy_per_seed: patch.accuracy_per_seed,
        no_context_accuracy: overall("No-Context").accuracy_mean,
        query_modality: qm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePoint {
    pub n: usize,
    pub examples_per_seed: Vec<f64>,
    pub instruction_per_seed: Vec<f64>,
    pub ensemble_per_seed: Vec<f64>,
    pub examples_mean: f64,
    pub examples_var: f64,
    pub instruction_mean: f64,
    pub instruction_var: f64,
    pub ensemble_mean: f64,
    pub ensemble_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCurve {
    pub layer: usize,
    pub query_modality: Modality,
    pub points: Vec<EnsemblePoint>,
}

/// Patch accuracy of text-example vectors, instruction vectors and their
/// uniform average as the number of examples grows.
pub fn ensemble_curve(subject: &impl Subject, suite: &TaskSuite, cfg: &RunConfig, layer: usize) -> Result<EnsembleCurve> {
    cfg.validate()?;
    let qm = cfg.probe_query_modality;
    let instr = instruction_vectors(subject, suite, layer)?;
    let splits = splits(suite, cfg)?;
    let mut points = Vec::new();
    for &n in &cfg.ensemble_ns {
        let mut tally = Tally::default();
        for (si, &seed) in cfg.eval_seeds.iter().enumerate() {
            for (t, (_, test)) in splits.iter().enumerate() {
                for &c in queries(test, cfg) {
                    let label = suite.label(t, c);
                    let spec = draw_spec(suite, seed, test, c, n, Modality::Text)?;
                    let v = vector_at(subject, &render_prompt(suite, Some(&spec), None, Template::Generic)?, layer)?;
                    let ens = ensemble_vectors(&[instr[t].clone(), v.clone()], None)?;
                    let q = bare(suite, c, qm)?;
                    tally.record("examples", qm, t, si, patched(subject, &q, &v, cfg.max_new)?, label);
                    tally.record("instruction", qm, t, si, patched(subject, &q, &instr[t], cfg.max_new)?, label);
                    tally.record("ensemble", qm, t, si, patched(subject, &q, &ens, cfg.max_new)?, label);
                }
            }
        }
        let rows = tally.rows(suite.tasks.len(), cfg.eval_seeds.len(), cfg.case_insensitive)?;
        let seeds = |m: &str| {
            rows.iter()
                .find(|r| r.method == m && r.task_id.is_none())
                .map(|r| r.accuracy_per_seed.clone())
                .unwrap()
        };
        let (e, i, s) = (seeds("examples"), seeds("instruction"), seeds("ensemble"));
        points.push(EnsemblePoint {
            n,
            examples_mean: mean(&e),
            examples_var: variance(&e),
            instruction_mean: mean(&i),
            instruction_var: variance(&i),
            ensemble_mean: mean(&s),
            ensemble_var: variance(&s),
            examples_per_seed: e,
            instruction_per_seed: i,
            ensemble_per_seed: s,
        });
    }
    Ok(EnsembleCurve {
        layer,
        query_modality: qm,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRow {
    pub condition: String,
    /// First token equals the overriding task's label.
    pub success_rate: f64,
    /// First token equals the prompted task's label.
    pub original_rate: f64,
    pub n_judged: usize,
    pub n_skipped: usize,
}

pub(crate) const OVERRIDE_CONDITIONS: [&str; 3] = ["Original Task", "Original + System Prompt", "Instruction Patch"];

/// Prompts ask for one task while a system-style prefix or a patched
/// instruction vector asks for another.
pub fn overriding_eval(subject: &impl Subject, suite: &TaskSuite, cfg: &RunConfig, layer: usize) -> Result<Vec<OverrideRow>> {
    cfg.validate()?;
    let instr = instruction_vectors(subject, suite, layer)?;
    let splits = splits(suite, cfg)?;
    let qm = cfg.probe_query_modality;
    let mut success = [0usize; 3];
    let mut original = [0usize; 3];
    let (mut judged, mut skipped) = (0usize, 0usize);
    for (a, (_, test)) in splits.iter().enumerate() {
        for b in (0..suite.tasks.len()).filter(|&b| b != a) {
            for &c in queries(test, cfg) {
                let pair = build_override_pair(suite, a, b, Query::new(c, qm))?;
                if pair.skip {
                    skipped += 1;
                    continue;
                }
                judged += 1;
                let mut sys = suite.tasks[b].name_tokens.clone();
                sys.extend([COLON, BLANK]);
                sys.extend_from_slice(pair.prompt.tokens.ids());
                let outputs = [
                    subject.generate(&pair.prompt.tokens, None, cfg.max_new)?,
                    subject.generate(&suite.vocab.sequence(&sys), None, cfg.max_new)?,
                    patched(subject, &pair.prompt, &instr[b], cfg.max_new)?,
                ];
                for (k, out) in outputs.iter().enumerate() {
                    success[k] += usize::from(out.first() == Some(&pair.override_label));
                    original[k] += usize::from(out.first() == Some(&pair.original_label));
                }
            }
        }
    }
    if judged == 0 {
        return Err(Error::Experiment("no judgeable override pairs".into()));
    }
    Ok(OVERRIDE_CONDITIONS
        .iter()
        .enumerate()
        .map(|(k, name)| OverrideRow {
            condition: name.to_string(),
            success_rate: success[k] as f64 / judged as f64,
            original_rate: original[k] as f64 / judged as f64,
            n_judged: judged,
            n_skipped: skipped,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub swaps: usize,
    pub method: String,
    pub accuracy_mean: f64,
    pub accuracy_per_seed: Vec<f64>,
}

/// Instruction prompting and instruction-vector patching under adjacent
/// token swaps in the instruction.
pub fn noise_eval(subject: &impl Subject, suite: &TaskSuite, cfg: &RunConfig, layer: usize) -> Result<Vec<NoiseRow>> {
    cfg.validate()?;
    let qm = cfg.probe_query_modality;
    let splits = splits(suite, cfg)?;
    let mut rows = Vec::new();
    for &s in &cfg.noise_swaps {
        let mut tally = Tally::default();
        for (si, &seed) in cfg.eval_seeds.iter().enumerate() {
            for (t, (_, test)) in splits.iter().enumerate() {
                for &c in queries(test, cfg) {
                    let mut rng = seeded_rng(seed, &[5, t as u64, c as u64, s as u64]);
                    let spec = inject_noise(&Specification::instruction(&suite.tasks[t]), s, &mut rng)?;
                    let v = vector_at(subject, &render_prompt(suite, Some(&spec), None, Template::Generic)?, layer)?;
                    let label = suite.label(t, c);
                    let full = render_prompt(suite, Some(&spec), Some(Query::new(c, qm)), Template::Generic)?;
                    tally.record("Instruction-Prompt", qm, t, si, subject.generate(&full.tokens, None, cfg.max_new)?, label);
                    tally.record("Instruction-Patch", qm, t, si, patched(subject, &bare(suite, c, qm)?, &v, cfg.max_new)?, label);
                }
            }
        }
        for r in tally.rows(suite.tasks.len(), cfg.eval_seeds.len(), cfg.case_insensitive)? {
            if r.task_id.is_none() {
                rows.push(NoiseRow {
                    swaps: s,
                    method: r.method,
                    accuracy_mean: r.accuracy_mean,
                    accuracy_per_seed: r.accuracy_per_seed,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_selection() {
        assert_eq!(SweepResult::from_accuracy(vec![3], vec![0.2]).unwrap().selected_layer, 3);
        assert_eq!(
            SweepResult::from_accuracy(vec![1, 2, 3, 4], vec![0.1, 0.5, 0.5, 0.4]).unwrap().selected_layer,
            2
        );
        assert_eq!(
            SweepResult::from_accuracy(vec![5, 2, 3], vec![0.5, 0.5, 0.1]).unwrap().selected_layer,
            2
        );
        assert!(SweepResult::from_accuracy(vec![], vec![]).is_err());
    }

    fn brute(a: &[(usize, Vec<f32>)], b: &[(usize, Vec<f32>)]) -> f64 {
        let (mut s, mut n) = (0.0, 0);
        for (ta, va) in a {
            for (tb, vb) in b {
                if ta != tb {
                    s += cosine(va, vb).unwrap();
                    n += 1;
                }
            }
        }
        s / n as f64
    }

    #[test]
    fn mismatched_mean_matches_enumeration() {
        let mut rng = seeded_rng(11, &[]);
        use rand::Rng;
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<(usize, Vec<f32>)> {
            (0..17)
                .map(|i| (i % 4, (0..6).map(|_| rng.random_range(-1.0f32..1.0)).collect()))
                .collect()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        assert!((mismatched_cosine_mean(&a, &b).unwrap() - brute(&a, &b)).abs() < 1e-12);
        let same: Vec<_> = a.iter().map(|(_, v)| (0, v.clone())).collect();
        assert!(mismatched_cosine_mean(&same, &same).is_err());
    }
}

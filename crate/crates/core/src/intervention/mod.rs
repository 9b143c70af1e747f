//! Task-vector extraction, patching, ensembling and logit-lens analysis.

mod vector;

pub use vector::{load_task_vector, save_task_vector, TaskVector, TASK_VECTOR_MAGIC};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{greedy_generate, Checkpoint, GenerateOptions, HookPoint, TokenSequence};
use crate::tasks::{Format, Modality, RenderedPrompt};

/// A vector together with the position it overwrites.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPlan {
    pub vector: TaskVector,
    pub target_position: usize,
}

impl PatchPlan {
    /// Targets the delimiter of `query`.
    pub fn at_delimiter(vector: TaskVector, query: &RenderedPrompt) -> Self {
        Self {
            vector,
            target_position: query.delimiter_index,
        }
    }

    fn hook(&self) -> HookPoint {
        HookPoint::replace(self.vector.layer, self.target_position, self.vector.values.clone())
    }
}

fn source_of(prompt: &RenderedPrompt) -> (Option<usize>, Modality, Format) {
    let m = &prompt.meta;
    let format = m.format.unwrap_or(Format::Examples);
    let modality = m
        .spec_modality
        .or(m.query.map(|q| q.modality))
        .unwrap_or(Modality::Text);
    (m.task_id, modality, format)
}

fn check_delimiter(prompt: &RenderedPrompt) -> Result<()> {
    if prompt.delimiter_index >= prompt.tokens.len() {
        return Err(Error::MissingDelimiter);
    }
    Ok(())
}

fn check_layer(ckpt: &Checkpoint, layer: usize, prompt: &RenderedPrompt) -> Result<()> {
    if layer > ckpt.config().n_layers {
        return Err(Error::HookOutOfRange {
            layer,
            position: prompt.delimiter_index,
            max_layer: ckpt.config().n_layers,
            seq_len: prompt.tokens.len(),
        });
    }
    Ok(())
}

/// The residual stream at the prompt's delimiter after `layer`.
pub fn extract_task_vector(ckpt: &Checkpoint, prompt: &RenderedPrompt, layer: usize) -> Result<TaskVector> {
    check_delimiter(prompt)?;
    check_layer(ckpt, layer, prompt)?;
    let out = ckpt
        .model()
        .forward_with_trace(&prompt.tokens, &[HookPoint::record(layer, prompt.delimiter_index)])?;
    let (task_id, modality, format) = source_of(prompt);
    TaskVector::new(
        out.recorded[0].values.to_vec(),
        layer,
        task_id,
        modality,
        format,
        ckpt.id(),
    )
}

/// Task vectors for every layer from a single forward pass.
pub fn extract_all_layers(ckpt: &Checkpoint, prompt: &RenderedPrompt) -> Result<Vec<TaskVector>> {
    check_delimiter(prompt)?;
    let out = ckpt.model().forward_with_trace(&prompt.tokens, &[])?;
    let (task_id, modality, format) = source_of(prompt);
    (0..=ckpt.config().n_layers)
        .map(|l| {
            TaskVector::new(
                out.trace.at(l, prompt.delimiter_index).to_vec(),
                l,
                task_id,
                modality,
                format,
                ckpt.id(),
            )
        })
        .collect()
}

/// Greedy generation from `query` with the plan's vector written over the
/// residual stream at its target position. Returns only the new tokens.
pub fn patch_generate(ckpt: &Checkpoint, query: &RenderedPrompt, plan: &PatchPlan, max_new: usize) -> Result<Vec<usize>> {
    let d = ckpt.config().d_model;
    if plan.vector.values.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: plan.vector.values.len(),
        });
    }
    let out = greedy_generate(ckpt.model(), &query.tokens, &[plan.hook()], GenerateOptions::new(max_new))?;
    Ok(out.ids()[query.tokens.len()..].to_vec())
}

/// Unpatched greedy generation; returns only the new tokens.
pub fn generate(ckpt: &Checkpoint, prompt: &TokenSequence, max_new: usize) -> Result<Vec<usize>> {
    let out = greedy_generate(ckpt.model(), prompt, &[], GenerateOptions::new(max_new))?;
    Ok(out.ids()[prompt.len()..].to_vec())
}

/// Element-wise weighted mean; uniform when `weights` is `None`.
pub fn ensemble_vectors(vectors: &[TaskVector], weights: Option<&[f64]>) -> Result<TaskVector> {
    let first = vectors.first().ok_or(Error::Empty("no vectors to ensemble"))?;
    let dim = first.values.len();
    for v in vectors {
        if v.layer != first.layer {
            return Err(Error::MixedLayers(first.layer, v.layer));
        }
        if v.values.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.values.len(),
            });
        }
    }
    let uniform = vec![1.0; vectors.len()];
    let weights = weights.unwrap_or(&uniform);
    if weights.len() != vectors.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} vectors",
            weights.len(),
            vectors.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidWeights("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidWeights("weights sum to zero".into()));
    }
    let values: Vec<f32> = (0..dim)
        .map(|i| {
            let s: f64 = vectors.iter().zip(weights).map(|(v, w)| w * v.values[i] as f64).sum();
            (s / total) as f32
        })
        .collect();
    let mut sources = Vec::new();
    for v in vectors {
        if v.sources.is_empty() {
            sources.push(v.describe());
        } else {
            sources.extend(v.sources.iter().cloned());
        }
    }
    let same_task = vectors.iter().all(|v| v.task_id == first.task_id);
    let mut out = TaskVector::new(
        values,
        first.layer,
        if same_task { first.task_id } else { None },
        first.source_modality,
        first.source_format,
        &first.source_checkpoint,
    )?;
    out.sources = sources;
    Ok(out)
}

fn softmax(logits: impl Iterator<Item = f64>) -> Vec<f64> {
    let v: Vec<f64> = logits.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn lens_logits(ckpt: &Checkpoint, activation: &[f32]) -> Result<Vec<f64>> {
    let d = ckpt.config().d_model;
    if activation.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: activation.len(),
        });
    }
    if activation.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let a = ndarray::ArrayView1::from(activation);
    Ok(ckpt.model().unembed(a).iter().map(|&x| x as f64).collect())
}

/// Vocabulary distribution read off an intermediate activation through the
/// final normalisation and unembedding.
pub fn logit_lens(ckpt: &Checkpoint, activation: &[f32]) -> Result<Vec<f64>> {
    Ok(softmax(lens_logits(ckpt, activation)?.into_iter()))
}

/// Input, task and answer tokens tracked through the layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTriplet {
    pub input_token: usize,
    pub task_token: usize,
    pub answer_token: usize,
}

impl PhaseTriplet {
    pub fn new(input_token: usize, task_token: usize, answer_token: usize) -> Result<Self> {
        if input_token == task_token || input_token == answer_token || task_token == answer_token {
            return Err(Error::Task("phase triplet tokens must be distinct".into()));
        }
        Ok(Self {
            input_token,
            task_token,
            answer_token,
        })
    }

    fn ids(&self) -> [usize; 3] {
        [self.input_token, self.task_token, self.answer_token]
    }
}

/// For each layer, the softmax over just the triplet's lens logits at the
/// delimiter: `[p_input, p_task, p_answer]`.
pub fn phase_profile(ckpt: &Checkpoint, prompt: &RenderedPrompt, triplet: &PhaseTriplet) -> Result<Vec<[f64; 3]>> {
    check_delimiter(prompt)?;
    let vocab = ckpt.config().vocab_size;
    if let Some(&bad) = triplet.ids().iter().find(|&&t| t >= vocab) {
        return Err(Error::TokenOutOfRange {
            id: bad,
            position: 0,
            vocab_size: vocab,
        });
    }
    let out = ckpt.model().forward_with_trace(&prompt.tokens, &[])?;
    (0..=ckpt.config().n_layers)
        .map(|l| {
            let act = out.trace.at(l, prompt.delimiter_index).to_vec();
            let logits = lens_logits(ckpt, &act)?;
            let p = softmax(triplet.ids().iter().map(|&t| logits[t]));
            Ok([p[0], p[1], p[2]])
        })
        .collect()
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| x as f64 * x as f64).sum();
    let nb: f64 = b.iter().map(|&x| x as f64 * x as f64).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    // sqrt(n * n) == n exactly, so cos(v, v) is exactly 1.
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &TaskVector, b: &TaskVector) -> Result<f64> {
    cosine(&a.values, &b.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig, TrainingMeta};
    use crate::tasks::{build_task_suite, render_prompt, Query, SuiteConfig, Template};

    fn vector(values: Vec<f32>, layer: usize) -> TaskVector {
        TaskVector::new(values, layer, Some(0), Modality::Text, Format::Examples, "x").unwrap()
    }

    fn tiny_ckpt(vocab: usize) -> Checkpoint {
        let model = Model::new(ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: vocab,
            max_seq_len: 32,
            seed: 3,
            ..ModelConfig::default()
        })
        .unwrap();
        Checkpoint::new(model, TrainingMeta::default()).unwrap()
    }

    #[test]
    fn ensemble_arithmetic() {
        let a = vector(vec![1.0, 3.0], 2);
        let b = vector(vec![3.0, 1.0], 2);
        assert_eq!(ensemble_vectors(&[a.clone(), b.clone()], None).unwrap().values, vec![2.0, 2.0]);
        assert_eq!(ensemble_vectors(&[a.clone(), a.clone()], None).unwrap().values, a.values);
        assert_eq!(ensemble_vectors(&[a.clone(), b.clone()], Some(&[1.0, 0.0])).unwrap().values, a.values);
        assert!(matches!(ensemble_vectors(&[], None), Err(Error::Empty(_))));
        assert!(matches!(
            ensemble_vectors(&[a.clone(), vector(vec![0.0, 0.0], 3)], None),
            Err(Error::MixedLayers(2, 3))
        ));
        assert!(ensemble_vectors(&[a.clone(), b.clone()], Some(&[0.0, 0.0])).is_err());
        assert!(ensemble_vectors(&[a.clone(), b], Some(&[-1.0, 2.0])).is_err());
        let e = ensemble_vectors(&[a.clone(), a], None).unwrap();
        assert_eq!(e.sources.len(), 2);
    }

    #[test]
    fn cosine_cases() {
        let v = vector(vec![0.3, -1.2, 2.0], 0);
        let neg = vector(v.values.iter().map(|x| -x).collect(), 0);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn lens_is_a_distribution() {
        let ckpt = tiny_ckpt(11);
        let p = logit_lens(&ckpt, &[0.5, -1.0, 0.0, 2.0, 1.0, 0.0, 0.0, 3.0]).unwrap();
        assert_eq!(p.len(), 11);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!(matches!(logit_lens(&ckpt, &[f32::NAN; 8]), Err(Error::NonFinite)));
    }

    #[test]
    fn identity_patch_reproduces_generation() {
        let suite = build_task_suite(&SuiteConfig::default()).unwrap();
        let ckpt = tiny_ckpt(suite.vocab.size());
        let q = render_prompt(&suite, None, Some(Query::new(3, Modality::Text)), Template::BareQuery).unwrap();
        let plain = generate(&ckpt, &q.tokens, 3).unwrap();
        for l in 0..=2 {
            let v = extract_task_vector(&ckpt, &q, l).unwrap();
            let patched = patch_generate(&ckpt, &q, &PatchPlan::at_delimiter(v, &q), 3).unwrap();
            assert_eq!(patched, plain);
        }
        assert!(extract_task_vector(&ckpt, &q, 3).is_err());
    }

    #[test]
    fn phase_triplet_must_be_distinct() {
        assert!(PhaseTriplet::new(1, 1, 2).is_err());
        assert!(PhaseTriplet::new(1, 2, 3).is_ok());
    }
}

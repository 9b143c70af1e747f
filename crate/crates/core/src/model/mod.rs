//! Minimal decoder-only transformer with a hookable residual stream.

mod backward;
mod checkpoint;
mod config;
mod forward;
mod generate;
mod gradcheck;
mod params;
mod tokens;
mod train;

pub use backward::{loss, loss_and_grad, LossExample};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Activation, ModelConfig};
pub use forward::{ActivationTrace, HookAction, HookPoint};
pub use generate::{greedy_generate, GenerateOptions};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use params::{BlockParams, Params, Scalar};
pub use tokens::{ModalityTag, TokenSequence};
pub use train::{fine_tune_modality, train_model, TrainHparams, TrainProgress, TrainingEpisode, Transplant};

pub(crate) use forward::{forward_packed, layer_norm_vec, PackedHook};

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// A configuration plus parameters in precision `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F = f32> {
    pub config: ModelConfig,
    pub params: Params<F>,
}

/// A value captured by a record hook.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedActivation<F = f32> {
    pub layer: usize,
    pub position: usize,
    pub values: Array1<F>,
}

/// Next-token logits for every position together with the residual trace.
#[derive(Debug, Clone)]
pub struct ForwardOutput<F = f32> {
    pub logits: Array2<F>,
    pub trace: ActivationTrace<F>,
    pub recorded: Vec<RecordedActivation<F>>,
}

impl<F: Scalar> Model<F> {
    /// Seeded initialisation.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config);
        Ok(Self { config, params })
    }

    pub fn validate_input(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        if ids.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(position) = ids.iter().position(|&id| id >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id: ids[position],
                position,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn validate_hooks(&self, seq_len: usize, hooks: &[HookPoint]) -> Result<()> {
        for h in hooks {
            if h.layer > self.config.n_layers || h.position >= seq_len {
                return Err(Error::HookOutOfRange {
                    layer: h.layer,
                    position: h.position,
                    max_layer: self.config.n_layers,
                    seq_len,
                });
            }
            if let HookAction::Replace(v) = &h.action {
                if v.len() != self.config.d_model {
                    return Err(Error::DimensionMismatch {
                        expected: self.config.d_model,
                        got: v.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Runs one sequence, applying replace-hooks to the residual stream
    /// before the next block reads it and returning every layer's activations.
    pub fn forward_with_trace(&self, tokens: &TokenSequence, hooks: &[HookPoint]) -> Result<ForwardOutput<F>> {
        let ids = tokens.ids();
        self.validate_input(ids)?;
        self.validate_hooks(ids.len(), hooks)?;
        let converted: Vec<(usize, usize, Vec<F>)> = hooks
            .iter()
            .filter_map(|h| match &h.action {
                HookAction::Replace(v) => Some((
                    h.layer,
                    h.position,
                    v.iter().map(|&x| F::from_f32(x).unwrap()).collect(),
                )),
                HookAction::Record => None,
            })
            .collect();
        let packed_hooks: Vec<PackedHook<F>> = converted
            .iter()
            .map(|(layer, position, values)| PackedHook {
                seq: 0,
                layer: *layer,
                position: *position,
                values,
            })
            .collect();
        let packed = forward_packed(&self.config, &self.params, &[ids], &packed_hooks);
        let trace = forward::trace_for(&packed, 0);
        let recorded = hooks
            .iter()
            .filter(|h| matches!(h.action, HookAction::Record))
            .map(|h| RecordedActivation {
                layer: h.layer,
                position: h.position,
                values: trace.at(h.layer, h.position).to_owned(),
            })
            .collect();
        Ok(ForwardOutput {
            logits: forward::logits_for(&packed, 0),
            trace,
            recorded,
        })
    }

    /// Batched forward without hooks; returns per-sequence logits.
    pub fn forward_batch(&self, batch: &[&TokenSequence]) -> Result<Vec<Array2<F>>> {
        for t in batch {
            self.validate_input(t.ids())?;
        }
        let seqs: Vec<&[usize]> = batch.iter().map(|t| t.ids()).collect();
        let packed = forward_packed(&self.config, &self.params, &seqs, &[]);
        Ok((0..batch.len()).map(|i| forward::logits_for(&packed, i)).collect())
    }

    /// The model's final normalisation applied to one activation.
    pub fn final_norm(&self, activation: ArrayView1<F>) -> Array1<F> {
        layer_norm_vec(activation, &self.params.final_gain, &self.params.final_bias)
    }

    /// Final normalisation followed by the unembedding.
    pub fn unembed(&self, activation: ArrayView1<F>) -> Array1<F> {
        let normed = self.final_norm(activation);
        normed.dot(&self.params.unembed_matrix())
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(&self.config),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model<f32> {
        Model::new(ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 10,
            max_seq_len: 6,
            seed: 1,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn seq(ids: &[usize]) -> TokenSequence {
        TokenSequence::new(ids.to_vec(), vec![ModalityTag::Text; ids.len()]).unwrap()
    }

    #[test]
    fn rejects_long_sequences() {
        let m = tiny();
        let err = m.forward_with_trace(&seq(&[1; 7]), &[]).unwrap_err();
        assert!(matches!(err, Error::SequenceTooLong { len: 7, max: 6 }));
    }

    #[test]
    fn rejects_bad_hooks() {
        let m = tiny();
        let s = seq(&[1, 2, 3]);
        assert!(matches!(
            m.forward_with_trace(&s, &[HookPoint::record(3, 0)]),
            Err(Error::HookOutOfRange { .. })
        ));
        assert!(matches!(
            m.forward_with_trace(&s, &[HookPoint::record(0, 3)]),
            Err(Error::HookOutOfRange { .. })
        ));
        assert!(matches!(
            m.forward_with_trace(&s, &[HookPoint::replace(1, 0, vec![0.0; 7])]),
            Err(Error::DimensionMismatch { expected: 8, got: 7 })
        ));
    }

    #[test]
    fn rejects_out_of_vocab_tokens() {
        let m = tiny();
        assert!(matches!(
            m.forward_with_trace(&seq(&[1, 10]), &[]),
            Err(Error::TokenOutOfRange { id: 10, position: 1, .. })
        ));
    }

    #[test]
    fn batch_matches_single() {
        let m = tiny();
        let a = seq(&[1, 2, 3]);
        let b = seq(&[4, 5, 6, 7, 8]);
        let batched = m.forward_batch(&[&a, &b]).unwrap();
        let single = m.forward_with_trace(&b, &[]).unwrap();
        for (x, y) in batched[1].iter().zip(single.logits.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

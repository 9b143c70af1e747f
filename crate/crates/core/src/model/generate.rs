use super::forward::HookPoint;
use super::params::Scalar;
use super::tokens::{ModalityTag, TokenSequence};
use super::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateOptions {
    pub max_new: usize,
    /// Generation halts after emitting this token.
    pub stop_token: Option<usize>,
}

impl GenerateOptions {
    pub fn new(max_new: usize) -> Self {
        Self {
            max_new,
            stop_token: None,
        }
    }
}

fn argmax<F: Scalar>(row: ndarray::ArrayView1<F>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding. Hooks address absolute positions of the prefix and are
/// re-applied on every step, so a patched position stays patched while the
/// continuation grows. Returns prefix plus generated tokens; ties in the
/// argmax resolve to the lowest id.
pub fn greedy_generate<F: Scalar>(
    model: &Model<F>,
    prefix: &TokenSequence,
    hooks: &[HookPoint],
    opts: GenerateOptions,
) -> Result<TokenSequence> {
    if prefix.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut seq = prefix.clone();
    for _ in 0..opts.max_new {
        if seq.len() >= model.config.max_seq_len {
            break;
        }
        let out = model.forward_with_trace(&seq, hooks)?;
        let next = argmax(out.logits.row(seq.len() - 1));
        let tag = if Some(next) == opts.stop_token {
            ModalityTag::Structural
        } else {
            ModalityTag::Text
        };
        seq.push(next, tag);
        if Some(next) == opts.stop_token {
            break;
        }
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model() -> Model<f32> {
        Model::new(ModelConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ff: 8,
            vocab_size: 9,
            max_seq_len: 12,
            seed: 5,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn prefix() -> TokenSequence {
        TokenSequence::new(vec![1, 2, 3], vec![ModalityTag::Text; 3]).unwrap()
    }

    #[test]
    fn zero_new_tokens_returns_prefix() {
        let out = greedy_generate(&model(), &prefix(), &[], GenerateOptions::new(0)).unwrap();
        assert_eq!(out, prefix());
    }

    #[test]
    fn generation_is_deterministic() {
        let m = model();
        let a = greedy_generate(&m, &prefix(), &[], GenerateOptions::new(4)).unwrap();
        let b = greedy_generate(&m, &prefix(), &[], GenerateOptions::new(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 7);
    }

    #[test]
    fn stops_at_context_limit() {
        let out = greedy_generate(&model(), &prefix(), &[], GenerateOptions::new(100)).unwrap();
        assert_eq!(out.len(), 12);
    }

    #[test]
    fn empty_prefix_is_rejected() {
        assert!(greedy_generate(&model(), &TokenSequence::empty(), &[], GenerateOptions::new(1)).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        let row = ndarray::arr1(&[0.5f32, 1.0, 1.0]);
        assert_eq!(argmax(row.view()), 1);
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which modality a token position belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityTag {
    Text,
    Image,
    Structural,
}

/// Vocabulary ids with a parallel per-position modality tag.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    ids: Vec<usize>,
    tags: Vec<ModalityTag>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, tags: Vec<ModalityTag>) -> Result<Self> {
        if ids.len() != tags.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: tags.len(),
            });
        }
        Ok(Self { ids, tags })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn push(&mut self, id: usize, tag: ModalityTag) {
        self.ids.push(id);
        self.tags.push(tag);
    }

    pub fn extend_from(&mut self, other: &TokenSequence) {
        self.ids.extend_from_slice(&other.ids);
        self.tags.extend_from_slice(&other.tags);
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn tags(&self) -> &[ModalityTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn last(&self) -> Option<usize> {
        self.ids.last().copied()
    }

    /// Tokens from `start` onwards as a new sequence.
    pub fn suffix(&self, start: usize) -> TokenSequence {
        TokenSequence {
            ids: self.ids[start.min(self.len())..].to_vec(),
            tags: self.tags[start.min(self.len())..].to_vec(),
        }
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.ids.iter().position(|&id| id >= vocab_size) {
            Some(position) => Err(Error::TokenOutOfRange {
                id: self.ids[position],
                position,
                vocab_size,
            }),
            None => Ok(()),
        }
    }
}

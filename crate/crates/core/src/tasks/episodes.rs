//! Seeded streams of training episodes.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::seeded_rng;
use super::spec::Modality;
use super::suite::{TaskSuite, A, BLANK, COLON, NEWLINE, Q};
use crate::error::{Error, Result};
use crate::model::{TrainingEpisode, Transplant};

/// Relative frequency of each episode kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureWeights {
    pub text_icl: f64,
    pub text_instruction: f64,
    /// `Q : image \n A : text-concept`.
    pub caption: f64,
    pub image_icl: f64,
    pub image_instruction: f64,
    /// Example blocks whose inputs mix text and image renderings.
    pub mixed_icl: f64,
    /// Bare text query whose delimiter activation is replaced by that of a
    /// text-example context for the same task.
    pub transplant: f64,
    /// Layers a transplant may use, drawn uniformly.
    pub transplant_layers: Vec<usize>,
    /// Largest number of blocks in an ICL episode.
    pub max_blocks: usize,
}

impl MixtureWeights {
    /// The text-only mixture used for the base model.
    pub fn text_only() -> Self {
        Self {
            text_icl: 3.0,
            text_instruction: 1.0,
            caption: 0.0,
            image_icl: 0.0,
            image_instruction: 0.0,
            mixed_icl: 0.0,
            transplant: 4.0,
            transplant_layers: vec![3],
            max_blocks: 6,
        }
    }

    /// The modality fine-tuning mixture.
    pub fn with_images() -> Self {
        Self {
            text_icl: 2.0,
            text_instruction: 1.0,
            caption: 1.0,
            image_icl: 2.0,
            image_instruction: 1.0,
            mixed_icl: 0.0,
            transplant: 4.0,
            transplant_layers: vec![3],
            max_blocks: 6,
        }
    }

    fn weights(&self) -> [f64; 7] {
        [
            self.text_icl,
            self.text_instruction,
            self.caption,
            self.image_icl,
            self.image_instruction,
            self.mixed_icl,
            self.transplant,
        ]
    }

    pub fn uses_images(&self) -> bool {
        self.caption > 0.0 || self.image_icl > 0.0 || self.image_instruction > 0.0 || self.mixed_icl > 0.0
    }

    /// Short human-readable description stored in checkpoint metadata.
    pub fn describe(&self) -> String {
        let names = [
            "text-icl",
            "text-instruction",
            "caption",
            "image-icl",
            "image-instruction",
            "mixed-icl",
            "transplant",
        ];
        let parts: Vec<String> = names
            .iter()
            .zip(self.weights())
            .filter(|(_, w)| *w > 0.0)
            .map(|(n, w)| format!("{n}:{w}"))
            .collect();
        let layers = if self.transplant > 0.0 {
            format!(" transplant-layers={:?}", self.transplant_layers)
        } else {
            String::new()
        };
        format!("{} blocks<={}{layers}", parts.join(","), self.max_blocks)
    }
}

impl Default for MixtureWeights {
    fn default() -> Self {
        Self::text_only()
    }
}

/// Endless, deterministic episode generator.
pub struct EpisodeStream<'a> {
    suite: &'a TaskSuite,
    mixture: MixtureWeights,
    kinds: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl<'a> EpisodeStream<'a> {
    pub fn new(suite: &'a TaskSuite, mixture: MixtureWeights, seed: u64) -> Result<Self> {
        if mixture.max_blocks == 0 {
            return Err(Error::InvalidConfig("max_blocks must be at least 1".into()));
        }
        if mixture.transplant > 0.0 && mixture.transplant_layers.is_empty() {
            return Err(Error::InvalidConfig("transplant episodes need at least one layer".into()));
        }
        let kinds = WeightedIndex::new(mixture.weights())
            .map_err(|e| Error::InvalidConfig(format!("bad mixture weights: {e}")))?;
        Ok(Self {
            suite,
            mixture,
            kinds,
            rng: seeded_rng(seed, &[3]),
        })
    }
}

struct Builder {
    ids: Vec<usize>,
    targets: Vec<bool>,
}

impl Builder {
    fn new() -> Self {
        Self {
            ids: Vec::new(),
            targets: Vec::new(),
        }
    }

    fn push(&mut self, tokens: &[usize], target: bool) {
        self.ids.extend_from_slice(tokens);
        self.targets.extend(std::iter::repeat_n(target, tokens.len()));
    }

    fn block(&mut self, input: &[usize], answer: &[usize]) {
        if !self.ids.is_empty() {
            self.push(&[BLANK], false);
        }
        self.push(&[Q, COLON], false);
        self.push(input, false);
        self.push(&[NEWLINE, A, COLON], false);
        self.push(answer, true);
    }
}

impl EpisodeStream<'_> {
    fn render(&self, concept: usize, modality: Modality) -> Vec<usize> {
        match modality {
            Modality::Text => vec![self.suite.vocab.text_token(concept)],
            Modality::Image => self.suite.vocab.image_tokens(concept),
        }
    }

    fn icl(&mut self, modality: impl Fn(&mut ChaCha8Rng) -> Modality) -> Builder {
        let task = self.rng.random_range(0..self.suite.tasks.len());
        let n_blocks = self.rng.random_range(1..=self.mixture.max_blocks);
        let concepts = rand::seq::index::sample(&mut self.rng, self.suite.n_concepts(), n_blocks);
        let mut b = Builder::new();
        for c in concepts {
            let m = modality(&mut self.rng);
            b.block(&self.render(c, m), &[self.suite.label(task, c)]);
        }
        b
    }

    fn instruction(&mut self, modality: Modality) -> Builder {
        let task = self.rng.random_range(0..self.suite.tasks.len());
        let c = self.rng.random_range(0..self.suite.n_concepts());
        let mut b = Builder::new();
        b.push(&self.suite.tasks[task].name_tokens, false);
        b.push(&[COLON], false);
        b.block(&self.render(c, modality), &[self.suite.label(task, c)]);
        b
    }

    /// Source: text examples ending at the last answer colon. Target: a
    /// bare query for a concept not among the examples.
    fn transplant(&mut self) -> TrainingEpisode {
        let task = self.rng.random_range(0..self.suite.tasks.len());
        // The last label is cut off, so at least two blocks are needed for
        // the source to show the task at all.
        let n_blocks = self.rng.random_range(2..=self.mixture.max_blocks.max(2));
        let mut concepts = rand::seq::index::sample(&mut self.rng, self.suite.n_concepts(), n_blocks + 1).into_vec();
        let query = concepts.pop().expect("n_blocks + 1 > 0");
        let mut src = Builder::new();
        for &c in &concepts {
            src.block(&[self.suite.vocab.text_token(c)], &[self.suite.label(task, c)]);
        }
        src.ids.pop();
        src.targets.pop();
        let layer = self.mixture.transplant_layers[self.rng.random_range(0..self.mixture.transplant_layers.len())];
        let mut b = Builder::new();
        b.block(&[self.suite.vocab.text_token(query)], &[self.suite.label(task, query)]);
        TrainingEpisode {
            tokens: self.suite.vocab.sequence(&b.ids),
            targets: b.targets,
            transplant: Some(Transplant {
                source_position: src.ids.len() - 1,
                source: self.suite.vocab.sequence(&src.ids),
                source_targets: src.targets,
                target_position: b.ids.len() - 2,
                layer,
            }),
        }
    }

    fn caption(&mut self) -> Builder {
        let c = self.rng.random_range(0..self.suite.n_concepts());
        let mut b = Builder::new();
        b.block(&self.render(c, Modality::Image), &[self.suite.vocab.text_token(c)]);
        b
    }
}

impl Iterator for EpisodeStream<'_> {
    type Item = TrainingEpisode;

    fn next(&mut self) -> Option<TrainingEpisode> {
        let b = match self.kinds.sample(&mut self.rng) {
            0 => self.icl(|_| Modality::Text),
            1 => self.instruction(Modality::Text),
            2 => self.caption(),
            3 => self.icl(|_| Modality::Image),
            4 => self.instruction(Modality::Image),
            5 => self.icl(|r| if r.random_bool(0.5) { Modality::Text } else { Modality::Image }),
            _ => return Some(self.transplant()),
        };
        Some(TrainingEpisode {
            tokens: self.suite.vocab.sequence(&b.ids),
            targets: b.targets,
            transplant: None,
        })
    }
}

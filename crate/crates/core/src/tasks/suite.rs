//! The synthetic task suite: six concept→attribute tasks over one shared
//! concept pool, each concept with a text token and an image rendering.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::seeded_rng;
use crate::error::{Error, Result};
use crate::model::{ModalityTag, TokenSequence};

/// Structural token ids are fixed at the start of every vocabulary.
pub const Q: usize = 0;
pub const A: usize = 1;
pub const COLON: usize = 2;
pub const NEWLINE: usize = 3;
pub const BLANK: usize = 4;
const N_STRUCTURAL: usize = 5;

const TASK_NAMES: [(&str, &str); 6] = [
    ("country", "capital"),
    ("country", "currency"),
    ("animal", "latin"),
    ("animal", "young"),
    ("food", "color"),
    ("food", "flavor"),
];
const FAMILIES: [&str; 3] = ["country", "animal", "food"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub n_concepts: usize,
    /// Number of image tokens rendering one concept (1..=4).
    pub image_tokens_per_concept: usize,
    /// Label-set size of each of the six tasks.
    pub label_counts: [usize; 6],
    /// Derive the last task's labels mostly from the fifth task's labels.
    pub correlated: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_concepts: 150,
            image_tokens_per_concept: 1,
            label_counts: [24, 12, 20, 6, 8, 5],
            correlated: false,
        }
    }
}

/// Token-id layout of the suite vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub family_base: usize,
    pub attribute_base: usize,
    pub text_base: usize,
    pub image_base: usize,
    pub label_base: usize,
    pub n_concepts: usize,
    pub image_tokens_per_concept: usize,
    pub label_offsets: Vec<usize>,
    pub names: Vec<String>,
}

impl Vocab {
    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn text_token(&self, concept: usize) -> usize {
        self.text_base + concept
    }

    pub fn image_tokens(&self, concept: usize) -> Vec<usize> {
        let k = self.image_tokens_per_concept;
        (0..k).map(|j| self.image_base + concept * k + j).collect()
    }

    pub fn family_token(&self, family: usize) -> usize {
        self.family_base + family
    }

    pub fn attribute_token(&self, task: usize) -> usize {
        self.attribute_base + task
    }

    pub fn label_token(&self, task: usize, label: usize) -> usize {
        self.label_base + self.label_offsets[task] + label
    }

    pub fn is_structural(&self, id: usize) -> bool {
        id < N_STRUCTURAL
    }

    pub fn tag(&self, id: usize) -> ModalityTag {
        if id < N_STRUCTURAL {
            ModalityTag::Structural
        } else if (self.image_base..self.label_base).contains(&id) {
            ModalityTag::Image
        } else {
            ModalityTag::Text
        }
    }

    /// Which text concept a token names, if any.
    pub fn text_concept(&self, id: usize) -> Option<usize> {
        (self.text_base..self.text_base + self.n_concepts)
            .contains(&id)
            .then(|| id - self.text_base)
    }

    pub fn name(&self, id: usize) -> &str {
        self.names.get(id).map_or("<oov>", String::as_str)
    }

    pub fn sequence(&self, ids: &[usize]) -> TokenSequence {
        let tags = ids.iter().map(|&id| self.tag(id)).collect();
        TokenSequence::new(ids.to_vec(), tags).expect("equal lengths")
    }
}

/// One toy task: a total map from the concept pool to its own label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDef {
    pub id: usize,
    pub name: String,
    pub family: usize,
    /// `mapping[c]` is the label index of concept `c` within this task's label set.
    pub mapping: Vec<usize>,
    pub n_labels: usize,
    /// Instruction tokens: [family token, attribute token].
    pub name_tokens: Vec<usize>,
}

impl TaskDef {
    pub fn concept_pool(&self) -> std::ops::Range<usize> {
        0..self.mapping.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSuite {
    pub config: SuiteConfig,
    pub vocab: Vocab,
    pub tasks: Vec<TaskDef>,
}

impl TaskSuite {
    pub fn task(&self, id: usize) -> Result<&TaskDef> {
        self.tasks
            .get(id)
            .ok_or_else(|| Error::Task(format!("unknown task id {id}")))
    }

    /// Label token of `concept` under `task`.
    pub fn label(&self, task: usize, concept: usize) -> usize {
        self.vocab.label_token(task, self.tasks[task].mapping[concept])
    }

    pub fn n_concepts(&self) -> usize {
        self.config.n_concepts
    }

    /// Task owning a label token.
    pub fn task_of_label(&self, id: usize) -> Option<usize> {
        (0..self.tasks.len()).find(|&t| {
            let lo = self.vocab.label_token(t, 0);
            (lo..lo + self.tasks[t].n_labels).contains(&id)
        })
    }

    /// Writes the suite (vocabulary, tasks and the given splits) as JSON,
    /// tagged with the hash of the run that produced it.
    pub fn export(&self, splits: &[super::Split], config_hash: Option<&str>, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Export<'a> {
            config_hash: Option<&'a str>,
            suite: &'a TaskSuite,
            splits: &'a [super::Split],
        }
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(&Export {
            config_hash,
            suite: self,
            splits,
        })?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

fn assign_labels(rng: &mut impl Rng, n_concepts: usize, n_labels: usize) -> Vec<usize> {
    // Every label is used at least once; the rest are uniform.
    let mut mapping: Vec<usize> = (0..n_concepts)
        .map(|i| if i < n_labels { i } else { rng.random_range(0..n_labels) })
        .collect();
    mapping.shuffle(rng);
    mapping
}

/// Builds the six-task suite deterministically from `config.seed`.
pub fn build_task_suite(config: &SuiteConfig) -> Result<TaskSuite> {
    let k = config.image_tokens_per_concept;
    if !(1..=4).contains(&k) {
        return Err(Error::Task(format!("image_tokens_per_concept must be in 1..=4, got {k}")));
    }
    if config.n_concepts < 2 {
        return Err(Error::Task("need at least two concepts".into()));
    }
    if let Some(&bad) = config
        .label_counts
        .iter()
        .find(|&&n| n < 2 || n > config.n_concepts)
    {
        return Err(Error::Task(format!(
            "label count {bad} must be in 2..={}",
            config.n_concepts
        )));
    }

    let mut names: Vec<String> = ["Q", "A", ":", "\\n", "\\n\\n"].iter().map(|s| s.to_string()).collect();
    let family_base = names.len();
    names.extend(FAMILIES.iter().map(|f| format!("<{f}>")));
    let attribute_base = names.len();
    names.extend(TASK_NAMES.iter().map(|(_, a)| format!("<{a}>")));
    let text_base = names.len();
    names.extend((0..config.n_concepts).map(|c| format!("c{c}")));
    let image_base = names.len();
    for c in 0..config.n_concepts {
        names.extend((0..k).map(|j| format!("img{c}.{j}")));
    }
    let label_base = names.len();
    let mut label_offsets = Vec::with_capacity(6);
    let mut off = 0;
    for (t, &n) in config.label_counts.iter().enumerate() {
        label_offsets.push(off);
        names.extend((0..n).map(|l| format!("{}:{l}", TASK_NAMES[t].1)));
        off += n;
    }
    let vocab = Vocab {
        family_base,
        attribute_base,
        text_base,
        image_base,
        label_base,
        n_concepts: config.n_concepts,
        image_tokens_per_concept: k,
        label_offsets,
        names,
    };

    let mut tasks: Vec<TaskDef> = Vec::with_capacity(6);
    for (t, (family, attr)) in TASK_NAMES.iter().enumerate() {
        let mut rng = seeded_rng(config.seed, &[1, t as u64]);
        let n_labels = config.label_counts[t];
        let mapping = if config.correlated && t == 5 {
            let base = &tasks[4].mapping;
            let mut m: Vec<usize> = base
                .iter()
                .map(|&l| {
                    if rng.random_bool(0.8) {
                        l % n_labels
                    } else {
                        rng.random_range(0..n_labels)
                    }
                })
                .collect();
            for (l, slot) in m.iter_mut().take(n_labels).enumerate() {
                *slot = l;
            }
            m
        } else {
            assign_labels(&mut rng, config.n_concepts, n_labels)
        };
        let family_idx = FAMILIES.iter().position(|f| f == family).expect("known family");
        tasks.push(TaskDef {
            id: t,
            name: format!("{family}-{attr}"),
            family: family_idx,
            mapping,
            n_labels,
            name_tokens: vec![vocab.family_token(family_idx), vocab.attribute_token(t)],
        });
    }
    Ok(TaskSuite {
        config: config.clone(),
        vocab,
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_suite() {
        let cfg = SuiteConfig::default();
        assert_eq!(build_task_suite(&cfg).unwrap(), build_task_suite(&cfg).unwrap());
        let other = SuiteConfig { seed: 1, ..cfg.clone() };
        assert_ne!(build_task_suite(&cfg).unwrap().tasks, build_task_suite(&other).unwrap().tasks);
    }

    #[test]
    fn every_concept_has_one_text_token_and_one_rendering() {
        let suite = build_task_suite(&SuiteConfig {
            image_tokens_per_concept: 3,
            ..SuiteConfig::default()
        })
        .unwrap();
        let v = &suite.vocab;
        let mut seen = std::collections::HashSet::new();
        for c in 0..suite.n_concepts() {
            assert_eq!(v.tag(v.text_token(c)), ModalityTag::Text);
            assert_eq!(v.text_concept(v.text_token(c)), Some(c));
            let img = v.image_tokens(c);
            assert_eq!(img.len(), 3);
            for id in img {
                assert_eq!(v.tag(id), ModalityTag::Image);
                assert!(seen.insert(id), "image token shared between concepts");
            }
        }
    }

    #[test]
    fn tasks_share_pool_but_differ() {
        let suite = build_task_suite(&SuiteConfig::default()).unwrap();
        for a in 0..6 {
            for b in (a + 1)..6 {
                let ta = &suite.tasks[a];
                let tb = &suite.tasks[b];
                assert_eq!(ta.mapping.len(), tb.mapping.len());
                assert!((0..ta.mapping.len()).any(|c| suite.label(a, c) != suite.label(b, c)));
            }
        }
    }

    #[test]
    fn every_label_is_used_and_mapping_total() {
        let suite = build_task_suite(&SuiteConfig::default()).unwrap();
        for t in &suite.tasks {
            assert_eq!(t.mapping.len(), 150);
            let distinct: std::collections::HashSet<_> = t.mapping.iter().collect();
            assert_eq!(distinct.len(), t.n_labels);
            assert!(t.n_labels >= 2);
        }
    }

    #[test]
    fn token_classes_are_disjoint() {
        let suite = build_task_suite(&SuiteConfig::default()).unwrap();
        let v = &suite.vocab;
        assert_eq!(v.size(), 5 + 3 + 6 + 150 + 150 + 75);
        for t in 0..6 {
            for l in 0..suite.tasks[t].n_labels {
                let id = v.label_token(t, l);
                assert_eq!(suite.task_of_label(id), Some(t));
                assert_eq!(v.tag(id), ModalityTag::Text);
            }
            for &n in &suite.tasks[t].name_tokens {
                assert!(n >= v.family_base && n < v.text_base);
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let too_many_img = SuiteConfig {
            image_tokens_per_concept: 5,
            ..SuiteConfig::default()
        };
        assert!(build_task_suite(&too_many_img).is_err());
        let one_label = SuiteConfig {
            label_counts: [1, 2, 2, 2, 2, 2],
            ..SuiteConfig::default()
        };
        assert!(build_task_suite(&one_label).is_err());
    }

    #[test]
    fn correlated_option_couples_last_pair() {
        let suite = build_task_suite(&SuiteConfig {
            correlated: true,
            ..SuiteConfig::default()
        })
        .unwrap();
        let color = &suite.tasks[4].mapping;
        let flavor = &suite.tasks[5].mapping;
        let agree = color
            .iter()
            .zip(flavor)
            .filter(|(&c, &f)| c % 5 == f)
            .count();
        assert!(agree > 150 / 2);
    }
}

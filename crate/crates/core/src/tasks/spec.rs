use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::seeded_rng;
use super::suite::{TaskDef, TaskSuite};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Text, Modality::Image];

    pub fn label(self) -> &'static str {
        match self {
            Modality::Text => "Text",
            Modality::Image => "Image",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Examples,
    Instruction,
}

/// Which partition a split belongs to. Layer selection may only consume
/// `Validation` splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Validation,
    Test,
}

/// Concept ids of one partition of a task's pool. The same ids serve both
/// modalities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub task_id: usize,
    pub kind: SplitKind,
    pub concepts: Vec<usize>,
}

/// A concept rendered both ways, labelled under one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub concept: usize,
    pub text_tokens: Vec<usize>,
    pub image_tokens: Vec<usize>,
    pub label: usize,
}

impl Example {
    pub fn new(suite: &TaskSuite, task: usize, concept: usize) -> Self {
        Self {
            concept,
            text_tokens: vec![suite.vocab.text_token(concept)],
            image_tokens: suite.vocab.image_tokens(concept),
            label: suite.label(task, concept),
        }
    }

    pub fn tokens(&self, modality: Modality) -> &[usize] {
        match modality {
            Modality::Text => &self.text_tokens,
            Modality::Image => &self.image_tokens,
        }
    }
}

/// One concrete way of specifying a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specification {
    pub task_id: usize,
    pub format: Format,
    /// Example modality; `None` for instructions.
    pub modality: Option<Modality>,
    pub examples: Vec<Example>,
    /// Instruction tokens (possibly noised); empty for example specs.
    pub instruction: Vec<usize>,
}

impl Specification {
    pub fn instruction(task: &TaskDef) -> Self {
        Self {
            task_id: task.id,
            format: Format::Instruction,
            modality: None,
            examples: Vec::new(),
            instruction: task.name_tokens.clone(),
        }
    }
}

/// Split sizes for a pool: 30/100 at 130 or more, otherwise shrunk in the
/// 3:10 ratio with a floor of 6/20.
pub fn split_sizes(pool: usize) -> Result<(usize, usize)> {
    let (val, test) = if pool >= 130 {
        (30, 100)
    } else {
        ((pool * 3 / 13).max(6), (pool * 10 / 13).max(20))
    };
    if val + test > pool {
        return Err(Error::Task(format!(
            "pool of {pool} concepts is too small for a {val}/{test} split"
        )));
    }
    Ok((val, test))
}

/// Disjoint validation/test partition of a task's concept pool.
pub fn split_pool(task: &TaskDef, split_seed: u64) -> Result<(Split, Split)> {
    let pool = task.mapping.len();
    let (n_val, n_test) = split_sizes(pool)?;
    let mut rng = seeded_rng(split_seed, &[2, task.id as u64]);
    let picked = sample(&mut rng, pool, n_val + n_test).into_vec();
    Ok((
        Split {
            task_id: task.id,
            kind: SplitKind::Validation,
            concepts: picked[..n_val].to_vec(),
        },
        Split {
            task_id: task.id,
            kind: SplitKind::Test,
            concepts: picked[n_val..].to_vec(),
        },
    ))
}

pub const DEFAULT_N_EXAMPLES: usize = 5;

/// Draws `n` distinct examples from `pool` (excluding the query concept)
/// without replacement. Instruction specs ignore `pool` and `n`.
#[allow(clippy::too_many_arguments)]
pub fn sample_specification(
    suite: &TaskSuite,
    task: usize,
    modality: Modality,
    format: Format,
    n: usize,
    pool: &[usize],
    query: usize,
    rng: &mut impl Rng,
) -> Result<Specification> {
    let def = suite.task(task)?;
    if format == Format::Instruction {
        return Ok(Specification::instruction(def));
    }
    if !pool.contains(&query) {
        return Err(Error::Task(format!("query concept {query} is not in the pool")));
    }
    let candidates: Vec<usize> = pool.iter().copied().filter(|&c| c != query).collect();
    if n > candidates.len() {
        return Err(Error::Task(format!(
            "cannot draw {n} examples from a pool of {} (excluding the query)",
            candidates.len()
        )));
    }
    let examples = sample(rng, candidates.len(), n)
        .into_iter()
        .map(|i| Example::new(suite, task, candidates[i]))
        .collect();
    Ok(Specification {
        task_id: task,
        format,
        modality: Some(modality),
        examples,
        instruction: Vec::new(),
    })
}

/// Most frequent example label; ties go to the label that occurs first.
pub fn majority_baseline(spec: &Specification) -> Result<usize> {
    if spec.format != Format::Examples || spec.examples.is_empty() {
        return Err(Error::Task("majority baseline needs an example specification".into()));
    }
    let labels: Vec<usize> = spec.examples.iter().map(|e| e.label).collect();
    let mut best = labels[0];
    let mut best_count = 0;
    for (i, &l) in labels.iter().enumerate() {
        if labels[..i].contains(&l) {
            continue;
        }
        let count = labels.iter().filter(|&&x| x == l).count();
        if count > best_count {
            best = l;
            best_count = count;
        }
    }
    Ok(best)
}

/// Applies `swaps` adjacent-token swaps at random sites of the instruction.
pub fn inject_noise(spec: &Specification, swaps: usize, rng: &mut impl Rng) -> Result<Specification> {
    let sites: Vec<usize> = (0..swaps)
        .map(|_| {
            let len = spec.instruction.len();
            if len < 2 {
                return Err(Error::Task("instruction too short to swap tokens".into()));
            }
            Ok(rng.random_range(0..len - 1))
        })
        .collect::<Result<_>>()?;
    swap_at(spec, &sites)
}

/// Swaps tokens `i` and `i + 1` for each site in order.
pub fn swap_at(spec: &Specification, sites: &[usize]) -> Result<Specification> {
    if spec.format != Format::Instruction {
        return Err(Error::Task("noise applies to instruction specifications only".into()));
    }
    let mut out = spec.clone();
    for &i in sites {
        if i + 1 >= out.instruction.len() {
            return Err(Error::Task(format!("swap site {i} out of range")));
        }
        out.instruction.swap(i, i + 1);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{build_task_suite, SuiteConfig};

    fn suite() -> TaskSuite {
        build_task_suite(&SuiteConfig::default()).unwrap()
    }

    fn with_labels(labels: &[usize]) -> Specification {
        Specification {
            task_id: 0,
            format: Format::Examples,
            modality: Some(Modality::Text),
            examples: labels
                .iter()
                .enumerate()
                .map(|(i, &label)| Example {
                    concept: i,
                    text_tokens: vec![],
                    image_tokens: vec![],
                    label,
                })
                .collect(),
            instruction: vec![],
        }
    }

    #[test]
    fn split_is_30_100_and_disjoint() {
        let s = suite();
        for t in &s.tasks {
            let (val, test) = split_pool(t, 0).unwrap();
            assert_eq!(val.concepts.len(), 30);
            assert_eq!(test.concepts.len(), 100);
            assert!(val.concepts.iter().all(|c| !test.concepts.contains(c)));
            assert_eq!(split_pool(t, 0).unwrap(), (val, test));
        }
    }

    #[test]
    fn small_pools_shrink() {
        assert_eq!(split_sizes(130).unwrap(), (30, 100));
        assert_eq!(split_sizes(65).unwrap(), (15, 50));
        assert_eq!(split_sizes(26).unwrap(), (6, 20));
        assert!(split_sizes(25).is_err());
    }

    #[test]
    fn default_n_is_five() {
        assert_eq!(DEFAULT_N_EXAMPLES, 5);
    }

    #[test]
    fn sampling_excludes_query_and_repeats() {
        let s = suite();
        let pool: Vec<usize> = (0..20).collect();
        let mut rng = seeded_rng(0, &[]);
        let spec = sample_specification(&s, 1, Modality::Image, Format::Examples, 5, &pool, 7, &mut rng).unwrap();
        assert_eq!(spec.examples.len(), 5);
        let concepts: Vec<usize> = spec.examples.iter().map(|e| e.concept).collect();
        assert!(!concepts.contains(&7));
        let distinct: std::collections::HashSet<_> = concepts.iter().collect();
        assert_eq!(distinct.len(), 5);
        assert!(sample_specification(&s, 1, Modality::Text, Format::Examples, 20, &pool, 7, &mut rng).is_err());
    }

    #[test]
    fn instruction_spec_has_no_examples() {
        let s = suite();
        let mut rng = seeded_rng(0, &[]);
        let spec = sample_specification(&s, 2, Modality::Text, Format::Instruction, 5, &[], 0, &mut rng).unwrap();
        assert!(spec.examples.is_empty());
        assert_eq!(spec.instruction, s.tasks[2].name_tokens);
    }

    #[test]
    fn majority_rules() {
        assert_eq!(majority_baseline(&with_labels(&[7, 8, 8])).unwrap(), 8);
        assert_eq!(majority_baseline(&with_labels(&[3, 4])).unwrap(), 3);
        assert_eq!(majority_baseline(&with_labels(&[5, 5, 5])).unwrap(), 5);
        assert_eq!(majority_baseline(&with_labels(&[9, 1, 1, 9])).unwrap(), 9);
        let s = suite();
        assert!(majority_baseline(&Specification::instruction(&s.tasks[0])).is_err());
    }

    #[test]
    fn noise_swaps() {
        let s = suite();
        let spec = Specification::instruction(&s.tasks[3]);
        let mut rng = seeded_rng(1, &[]);
        assert_eq!(inject_noise(&spec, 0, &mut rng).unwrap(), spec);
        let once = inject_noise(&spec, 1, &mut rng).unwrap();
        assert_eq!(once.instruction, vec![spec.instruction[1], spec.instruction[0]]);
        assert_eq!(swap_at(&spec, &[0, 0]).unwrap(), spec);
        let mut short = spec.clone();
        short.instruction.truncate(1);
        assert!(inject_noise(&short, 1, &mut rng).is_err());
        assert_eq!(inject_noise(&short, 0, &mut rng).unwrap(), short);
        assert!(inject_noise(&with_labels(&[1]), 1, &mut rng).is_err());
    }
}

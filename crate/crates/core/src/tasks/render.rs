use serde::{Deserialize, Serialize};

use super::spec::{Format, Modality, Specification};
use super::suite::{TaskSuite, A, BLANK, COLON, NEWLINE, Q};
use crate::error::{Error, Result};
use crate::model::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    /// Specification blocks followed by the query block.
    Generic,
    /// The query block alone; the specification is ignored.
    BareQuery,
}

/// A concept presented in one modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub concept: usize,
    pub modality: Modality,
}

impl Query {
    pub fn new(concept: usize, modality: Modality) -> Self {
        Self { concept, modality }
    }

    pub fn tokens(&self, suite: &TaskSuite) -> Vec<usize> {
        match self.modality {
            Modality::Text => vec![suite.vocab.text_token(self.concept)],
            Modality::Image => suite.vocab.image_tokens(self.concept),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub task_id: Option<usize>,
    pub format: Option<Format>,
    pub spec_modality: Option<Modality>,
    pub query: Option<Query>,
}

/// Tokens plus the position where task vectors are read or written.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub tokens: TokenSequence,
    pub delimiter_index: usize,
    pub meta: PromptMeta,
}

fn query_block(suite: &TaskSuite, query: &Query, out: &mut Vec<usize>) {
    out.push(Q);
    out.push(COLON);
    out.extend(query.tokens(suite));
    out.extend([NEWLINE, A, COLON]);
}

/// Renders a specification and/or a query.
///
/// Example blocks are `Q : x \n A : y`, joined by a blank token. An
/// instruction is its name tokens followed by a colon. With a query the
/// block `Q : q \n A :` is appended after a blank and the delimiter is its
/// final colon. Without one, the delimiter is the last example's answer
/// colon (the trailing answer is kept but cannot influence it), or the
/// instruction's colon.
pub fn render_prompt(
    suite: &TaskSuite,
    spec: Option<&Specification>,
    query: Option<Query>,
    template: Template,
) -> Result<RenderedPrompt> {
    let mut ids = Vec::new();
    let mut delimiter = None;
    let spec = match template {
        Template::Generic => spec,
        Template::BareQuery => None,
    };
    if template == Template::BareQuery && query.is_none() {
        return Err(Error::Task("bare-query template needs a query".into()));
    }
    if let Some(spec) = spec {
        match spec.format {
            Format::Examples => {
                let modality = spec
                    .modality
                    .ok_or_else(|| Error::Task("example specification without modality".into()))?;
                for (i, ex) in spec.examples.iter().enumerate() {
                    if i > 0 {
                        ids.push(BLANK);
                    }
                    ids.extend([Q, COLON]);
                    ids.extend_from_slice(ex.tokens(modality));
                    ids.extend([NEWLINE, A, COLON]);
                    delimiter = Some(ids.len() - 1);
                    ids.push(ex.label);
                }
            }
            Format::Instruction => {
                ids.extend_from_slice(&spec.instruction);
                ids.push(COLON);
                delimiter = Some(ids.len() - 1);
            }
        }
    }
    if let Some(q) = &query {
        if !ids.is_empty() {
            ids.push(BLANK);
        }
        query_block(suite, q, &mut ids);
        delimiter = Some(ids.len() - 1);
    }
    let delimiter_index = delimiter.ok_or_else(|| Error::Task("nothing to render: empty specification and no query".into()))?;
    Ok(RenderedPrompt {
        tokens: suite.vocab.sequence(&ids),
        delimiter_index,
        meta: PromptMeta {
            task_id: spec.map(|s| s.task_id),
            format: spec.map(|s| s.format),
            spec_modality: spec.and_then(|s| s.modality),
            query,
        },
    })
}

/// One overriding trial: the prompt asks for `task_a`, the patch asks for
/// `task_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverridePair {
    pub task_a: usize,
    pub task_b: usize,
    pub prompt: RenderedPrompt,
    pub override_spec: Specification,
    pub original_label: usize,
    pub override_label: usize,
    /// Both tasks give the same answer here, so success cannot be judged.
    pub skip: bool,
}

pub fn build_override_pair(suite: &TaskSuite, task_a: usize, task_b: usize, query: Query) -> Result<OverridePair> {
    if task_a == task_b {
        return Err(Error::Task(format!("override needs two different tasks, got {task_a} twice")));
    }
    let a = suite.task(task_a)?;
    let b = suite.task(task_b)?;
    if query.concept >= a.mapping.len() || query.concept >= b.mapping.len() {
        return Err(Error::Task(format!("concept {} is outside the task pools", query.concept)));
    }
    let original_label = suite.label(task_a, query.concept);
    let override_label = suite.label(task_b, query.concept);
    let prompt = render_prompt(suite, Some(&Specification::instruction(a)), Some(query), Template::Generic)?;
    Ok(OverridePair {
        task_a,
        task_b,
        prompt,
        override_spec: Specification::instruction(b),
        original_label,
        override_label,
        skip: original_label == override_label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{build_task_suite, seeded_rng, spec::sample_specification, SuiteConfig};

    fn suite() -> TaskSuite {
        build_task_suite(&SuiteConfig::default()).unwrap()
    }

    #[test]
    fn two_examples_and_query_layout() {
        let s = suite();
        let pool: Vec<usize> = (0..10).collect();
        let mut rng = seeded_rng(3, &[]);
        let spec = sample_specification(&s, 0, Modality::Text, Format::Examples, 2, &pool, 9, &mut rng).unwrap();
        let p = render_prompt(&s, Some(&spec), Some(Query::new(9, Modality::Text)), Template::Generic).unwrap();
        let (x1, y1) = (spec.examples[0].text_tokens[0], spec.examples[0].label);
        let (x2, y2) = (spec.examples[1].text_tokens[0], spec.examples[1].label);
        let q = s.vocab.text_token(9);
        let expected = vec![
            Q, COLON, x1, NEWLINE, A, COLON, y1, BLANK, Q, COLON, x2, NEWLINE, A, COLON, y2, BLANK, Q, COLON, q, NEWLINE, A, COLON,
        ];
        assert_eq!(p.tokens.ids(), expected.as_slice());
        assert_eq!(p.delimiter_index, expected.len() - 1);
    }

    #[test]
    fn bare_query_ignores_spec() {
        let s = suite();
        let spec = Specification::instruction(&s.tasks[0]);
        let q = Query::new(4, Modality::Image);
        let p = render_prompt(&s, Some(&spec), Some(q), Template::BareQuery).unwrap();
        let img = s.vocab.image_tokens(4)[0];
        assert_eq!(p.tokens.ids(), &[Q, COLON, img, NEWLINE, A, COLON]);
        assert_eq!(p.delimiter_index, 5);
        assert_eq!(p.meta.task_id, None);
        assert_eq!(p.tokens.tags()[2], crate::model::ModalityTag::Image);
    }

    #[test]
    fn spec_only_delimiter_is_last_answer_colon() {
        let s = suite();
        let pool: Vec<usize> = (0..10).collect();
        let mut rng = seeded_rng(3, &[]);
        let spec = sample_specification(&s, 2, Modality::Image, Format::Examples, 3, &pool, 0, &mut rng).unwrap();
        let p = render_prompt(&s, Some(&spec), None, Template::Generic).unwrap();
        assert_eq!(p.delimiter_index, p.tokens.len() - 2);
        assert_eq!(p.tokens.ids()[p.delimiter_index], COLON);
        assert_eq!(p.tokens.ids()[p.delimiter_index - 1], A);
    }

    #[test]
    fn instruction_rendering() {
        let s = suite();
        let spec = Specification::instruction(&s.tasks[1]);
        let p = render_prompt(&s, Some(&spec), None, Template::Generic).unwrap();
        assert_eq!(p.tokens.ids(), &[spec.instruction[0], spec.instruction[1], COLON]);
        assert_eq!(p.delimiter_index, 2);
        assert!(render_prompt(&s, None, None, Template::Generic).is_err());
    }

    #[test]
    fn override_pairs() {
        let s = suite();
        assert!(build_override_pair(&s, 1, 1, Query::new(0, Modality::Text)).is_err());
        for c in 0..s.n_concepts() {
            let pair = build_override_pair(&s, 0, 1, Query::new(c, Modality::Image)).unwrap();
            assert_eq!(pair.skip, pair.original_label == pair.override_label);
            let ids = pair.prompt.tokens.ids();
            assert!(ids.starts_with(&s.tasks[0].name_tokens));
            assert_eq!(ids.iter().filter(|&&t| t == Q).count(), 1);
        }
    }
}

//! Multi-task supervision derived from a passage/question pair.
//!
//! * copy labels on question tokens: overlapping, non-stopword, and not among
//!   the `r_h` most frequent vocabulary words (or out of vocabulary);
//! * clue labels on passage tokens: non-stopwords that also occur in the
//!   question (no frequency condition);
//! * B/I/O tags marking the answer span;
//! * decoder targets over the reduced vocabulary, `<EOS>` appended.
//!
//! All matching uses [`normalize`]d surface forms.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{is_stopword, normalize, AnnotatedExample, ReducedTargetVocab, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BioTag {
    B,
    I,
    O,
}

impl BioTag {
    pub fn index(self) -> usize {
        match self {
            BioTag::B => 0,
            BioTag::I => 1,
            BioTag::O => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub base: AnnotatedExample,
    pub question_copy_label: Vec<bool>,
    /// Reduced-vocabulary id per question token, plus a final `<EOS>`.
    pub question_target_id: Vec<usize>,
    /// Passage positions sharing the token's surface form; empty unless the
    /// token is copy-labeled.
    pub copy_alignment: Vec<Vec<usize>>,
    pub passage_clue_label: Vec<bool>,
    pub answer_bio: Vec<BioTag>,
}

impl LabeledExample {
    pub fn id(&self) -> &str {
        &self.base.id
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CopyLabels {
    pub copied: Vec<bool>,
    pub alignment: Vec<Vec<usize>>,
}

pub fn label_copy_words(ex: &AnnotatedExample, vocab: &Vocabulary, r_h: usize) -> CopyLabels {
    let passage: Vec<String> = ex.passage.iter().map(|t| normalize(&t.text)).collect();
    let mut copied = Vec::with_capacity(ex.question.len());
    let mut alignment = Vec::with_capacity(ex.question.len());
    for word in &ex.question {
        let key = normalize(word);
        let positions: Vec<usize> = passage
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == key)
            .map(|(i, _)| i)
            .collect();
        let rare = vocab.rank(&key).is_none_or(|r| r > r_h);
        let is_copy = !positions.is_empty() && !is_stopword(&key) && rare;
        copied.push(is_copy);
        alignment.push(if is_copy { positions } else { Vec::new() });
    }
    CopyLabels { copied, alignment }
}

pub fn label_clue_words(ex: &AnnotatedExample) -> Vec<bool> {
    let question: HashSet<String> = ex.question.iter().map(|w| normalize(w)).collect();
    ex.passage
        .iter()
        .map(|t| {
            let key = normalize(&t.text);
            !is_stopword(&key) && question.contains(&key)
        })
        .collect()
}

pub fn tag_answer_bio(ex: &AnnotatedExample) -> Vec<BioTag> {
    let (start, end) = ex.answer_span;
    (0..ex.passage.len())
        .map(|i| match i {
            i if i == start => BioTag::B,
            i if i > start && i <= end => BioTag::I,
            _ => BioTag::O,
        })
        .collect()
}

pub fn map_question_targets(question: &[String], reduced: &ReducedTargetVocab) -> Vec<usize> {
    question
        .iter()
        .map(|w| reduced.id_or_unk(w))
        .chain(std::iter::once(ReducedTargetVocab::EOS_ID))
        .collect()
}

/// Labels one example. Targets are left empty until a reduced vocabulary
/// exists; see [`assign_targets`].
pub fn label_example(ex: &AnnotatedExample, vocab: &Vocabulary, r_h: usize) -> LabeledExample {
    let copy = label_copy_words(ex, vocab, r_h);
    LabeledExample {
        question_copy_label: copy.copied,
        copy_alignment: copy.alignment,
        passage_clue_label: label_clue_words(ex),
        answer_bio: tag_answer_bio(ex),
        question_target_id: Vec::new(),
        base: ex.clone(),
    }
}

pub fn assign_targets(labeled: &mut [LabeledExample], reduced: &ReducedTargetVocab) {
    for ex in labeled {
        ex.question_target_id = map_question_targets(&ex.base.question, reduced);
    }
}

/// Labels a training corpus and builds its reduced target vocabulary.
pub fn label_corpus(
    corpus: &[AnnotatedExample],
    vocab: &Vocabulary,
    r_h: usize,
    n_target: usize,
) -> (Vec<LabeledExample>, ReducedTargetVocab) {
    let mut labeled: Vec<LabeledExample> = corpus.iter().map(|ex| label_example(ex, vocab, r_h)).collect();
    let reduced = ReducedTargetVocab::build(
        labeled
            .iter()
            .map(|l| (&l.base.question[..], &l.question_copy_label[..])),
        n_target,
    );
    assign_targets(&mut labeled, &reduced);
    (labeled, reduced)
}

/// Labels held-out data against vocabularies fixed at training time.
pub fn label_with(
    corpus: &[AnnotatedExample],
    vocab: &Vocabulary,
    reduced: &ReducedTargetVocab,
    r_h: usize,
) -> Vec<LabeledExample> {
    let mut labeled: Vec<LabeledExample> = corpus.iter().map(|ex| label_example(ex, vocab, r_h)).collect();
    assign_targets(&mut labeled, reduced);
    labeled
}

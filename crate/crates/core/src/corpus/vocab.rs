use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{normalize, AnnotatedExample, IngestError};
use crate::config::ConfigError;

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";
pub const EOS: &str = "<EOS>";
pub const SOS: &str = "<SOS>";
/// Shared embedding row for masked low-frequency words.
pub const LOW: &str = "<l>";

/// Counts normalized words and orders them by descending count, breaking
/// ties by first occurrence.
fn ranked_counts<'a>(words: impl IntoIterator<Item = &'a str>) -> Vec<(String, usize)> {
    let mut order: Vec<(String, usize)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for w in words {
        let key = normalize(w);
        match slot.get(&key) {
            Some(&i) => order[i].1 += 1,
            None => {
                slot.insert(key.clone(), order.len());
                order.push((key, 1));
            }
        }
    }
    // Stable sort keeps first-occurrence order within equal counts.
    order.sort_by_key(|e| std::cmp::Reverse(e.1));
    order
}

/// Source-side vocabulary ranked by corpus frequency (rank 1 = most
/// frequent). Embedding-table rows put the special tokens first:
/// `<PAD>`, `<UNK>`, `<EOS>`, `<SOS>`, `<l>`, then words in rank order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    ranks: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        Vocabulary::from_ranked(words)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    pub const SPECIALS: [&'static str; 5] = [PAD, UNK, EOS, SOS, LOW];
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const EOS_ID: usize = 2;
    pub const SOS_ID: usize = 3;
    pub const LOW_ID: usize = 4;

    /// Counts passage and question tokens of `corpus` and keeps the
    /// `max_size` most frequent words.
    pub fn build(corpus: &[AnnotatedExample], max_size: usize) -> Result<Self, IngestError> {
        if corpus.is_empty() {
            return Err(IngestError::Empty);
        }
        let words = corpus.iter().flat_map(|ex| {
            ex.passage
                .iter()
                .map(|t| t.text.as_str())
                .chain(ex.question.iter().map(String::as_str))
        });
        let ranked = ranked_counts(words)
            .into_iter()
            .take(max_size)
            .map(|(w, _)| w)
            .collect();
        Ok(Self::from_ranked(ranked))
    }

    /// Words in rank order, already normalized.
    pub fn from_ranked(words: Vec<String>) -> Self {
        let ranks = words.iter().enumerate().map(|(i, w)| (w.clone(), i + 1)).collect();
        Vocabulary { words, ranks }
    }

    /// Number of ranked words (specials excluded).
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// 1-based frequency rank of a surface form, `None` when out of
    /// vocabulary.
    pub fn rank(&self, word: &str) -> Option<usize> {
        self.ranks.get(&normalize(word)).copied()
    }

    pub fn word_at_rank(&self, rank: usize) -> Option<&str> {
        rank.checked_sub(1).and_then(|i| self.words.get(i)).map(String::as_str)
    }

    /// Embedding row of a surface form (`<UNK>` when absent).
    pub fn id(&self, word: &str) -> usize {
        self.rank(word).map_or(Self::UNK_ID, |r| Self::SPECIALS.len() - 1 + r)
    }

    pub fn table_rows(&self) -> usize {
        self.words.len() + Self::SPECIALS.len()
    }

    /// Word stored at an embedding row.
    pub fn token_at(&self, id: usize) -> Option<&str> {
        if id < Self::SPECIALS.len() {
            Some(Self::SPECIALS[id])
        } else {
            self.word_at_rank(id + 1 - Self::SPECIALS.len())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrequencyTier {
    H,
    M,
    L,
}

impl FrequencyTier {
    pub fn index(self) -> usize {
        match self {
            FrequencyTier::H => 0,
            FrequencyTier::M => 1,
            FrequencyTier::L => 2,
        }
    }
}

/// Validated rank thresholds `0 < r_h < r_l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TierThresholds {
    r_h: usize,
    r_l: usize,
}

impl TierThresholds {
    pub fn new(r_h: usize, r_l: usize) -> Result<Self, ConfigError> {
        if r_h == 0 || r_h >= r_l {
            return Err(ConfigError::Field {
                field: "r_h",
                reason: format!("thresholds must satisfy 0 < r_h < r_l, got r_h={r_h}, r_l={r_l}"),
            });
        }
        Ok(TierThresholds { r_h, r_l })
    }

    pub fn r_h(&self) -> usize {
        self.r_h
    }

    pub fn r_l(&self) -> usize {
        self.r_l
    }

    pub fn tier_of_rank(&self, rank: Option<usize>) -> FrequencyTier {
        match rank {
            Some(r) if r <= self.r_h => FrequencyTier::H,
            Some(r) if r <= self.r_l => FrequencyTier::M,
            _ => FrequencyTier::L,
        }
    }
}

pub fn tier_of(word: &str, vocab: &Vocabulary, thresholds: &TierThresholds) -> FrequencyTier {
    thresholds.tier_of_rank(vocab.rank(word))
}

/// Decoder output vocabulary: `<UNK>`, `<EOS>`, `<SOS>`, then the most
/// frequent question words that were labeled as generated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct ReducedTargetVocab {
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for ReducedTargetVocab {
    fn from(entries: Vec<String>) -> Self {
        let index = entries.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        ReducedTargetVocab { entries, index }
    }
}

impl From<ReducedTargetVocab> for Vec<String> {
    fn from(v: ReducedTargetVocab) -> Self {
        v.entries
    }
}

impl ReducedTargetVocab {
    pub const UNK_ID: usize = 0;
    pub const EOS_ID: usize = 1;
    pub const SOS_ID: usize = 2;

    /// Builds from `(question tokens, copy labels)` pairs, counting only
    /// tokens whose copy label is false.
    pub fn build<'a, I>(questions: I, n: usize) -> Self
    where
        I: IntoIterator<Item = (&'a [String], &'a [bool])>,
    {
        let generated = questions.into_iter().flat_map(|(q, copied)| {
            q.iter()
                .zip(copied)
                .filter(|(_, &c)| !c)
                .map(|(w, _)| w.as_str())
        });
        let mut entries: Vec<String> = vec![UNK.into(), EOS.into(), SOS.into()];
        entries.extend(
            ranked_counts(generated)
                .into_iter()
                .filter(|(w, _)| ![UNK, EOS, SOS].contains(&w.as_str()))
                .take(n)
                .map(|(w, _)| w),
        );
        Self::from(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(&normalize(word)).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> usize {
        self.get(word).unwrap_or(Self::UNK_ID)
    }

    pub fn surface(&self, id: usize) -> &str {
        &self.entries[id]
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    /// Words excluding the three special entries.
    pub fn words(&self) -> &[String] {
        &self.entries[3..]
    }
}

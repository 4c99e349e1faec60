//! Pre-parsed dataset records, vocabularies and frequency tiers.
//!
//! Each line of a dataset file is one JSON object:
//!
//! ```json
//! {"id": "q1",
//!  "passage_tokens": [{"text": "Obama", "pos": "PROPN", "ner": "PERSON", "dep": "nsubj",
//!                      "head": 1, "is_lower": false, "is_digit": false, "like_num": false}, ...],
//!  "answer_span": [0, 0],
//!  "question_tokens": ["who", "spoke", "?"]}
//! ```
//!
//! `head` is the index of the syntactic head within the passage; the root
//! points to itself. `answer_span` is inclusive.

mod stopwords;
mod vocab;

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use stopwords::{
    is_stopword, stopword_digest, stopword_set, STOPWORDS, STOPWORD_COUNT, STOPWORD_LIST_VERSION,
    STOPWORD_SHA256,
};
pub use vocab::{
    tier_of, FrequencyTier, ReducedTargetVocab, TierThresholds, Vocabulary, EOS, LOW, PAD, SOS, UNK,
};

/// Matching key for a surface form: lowercase, nothing else.
pub fn normalize(word: &str) -> String {
    word.to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedToken {
    pub text: String,
    pub pos: String,
    #[serde(default)]
    pub ner: String,
    pub dep: String,
    pub head: usize,
    pub is_lower: bool,
    pub is_digit: bool,
    pub like_num: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub id: String,
    #[serde(rename = "passage_tokens")]
    pub passage: Vec<AnnotatedToken>,
    /// Inclusive `(start, end)` token indices.
    pub answer_span: (usize, usize),
    #[serde(rename = "question_tokens", default)]
    pub question: Vec<String>,
}

impl AnnotatedExample {
    pub fn len(&self) -> usize {
        self.passage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passage.is_empty()
    }

    pub fn in_answer(&self, i: usize) -> bool {
        (self.answer_span.0..=self.answer_span.1).contains(&i)
    }

    pub fn heads(&self) -> Vec<usize> {
        self.passage.iter().map(|t| t.head).collect()
    }

    /// Checks the record invariants. A missing question is only an error
    /// when `require_question` is set.
    pub fn validate(&self, require_question: bool) -> Result<(), String> {
        let n = self.passage.len();
        if n == 0 {
            return Err("empty passage".into());
        }
        let (start, end) = self.answer_span;
        if start > end || end >= n {
            return Err(format!("answer span [{start}, {end}] out of range for {n} tokens"));
        }
        if require_question && self.question.is_empty() {
            return Err("empty question".into());
        }
        for (i, t) in self.passage.iter().enumerate() {
            if t.head >= n {
                return Err(format!("token {i} has head {} outside the passage", t.head));
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&i| self.passage[i].head == i).collect();
        if roots.len() != 1 {
            return Err(format!("expected exactly one root, found {}", roots.len()));
        }
        for i in 0..n {
            let mut cur = i;
            let mut steps = 0;
            while self.passage[cur].head != cur {
                cur = self.passage[cur].head;
                steps += 1;
                if steps > n {
                    return Err(format!("head chain from token {i} contains a cycle"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordProblem {
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

impl fmt::Display for RecordProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} (id {id}): {}", self.line, self.reason),
            None => write!(f, "line {}: {}", self.line, self.reason),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{} invalid record(s):\n{}", .0.len(), .0.iter().map(|p| format!("  {p}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<RecordProblem>),
    #[error("corpus is empty")]
    Empty,
}

impl IngestError {
    /// Ids of the offending records, where known.
    pub fn offending_ids(&self) -> Vec<&str> {
        match self {
            IngestError::Invalid(p) => p.iter().filter_map(|p| p.id.as_deref()).collect(),
            _ => Vec::new(),
        }
    }
}

/// Parses JSON-lines records. Blank lines are skipped; every malformed
/// record is reported, not just the first.
pub fn parse_corpus<R: BufRead>(reader: R, require_question: bool) -> Result<Vec<AnnotatedExample>, IngestError> {
    let mut out = Vec::new();
    let mut problems = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| IngestError::Io {
            path: format!("line {line_no}"),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<AnnotatedExample>(&line) {
            Ok(ex) => match ex.validate(require_question) {
                Ok(()) => out.push(ex),
                Err(reason) => problems.push(RecordProblem {
                    line: line_no,
                    id: Some(ex.id.clone()),
                    reason,
                }),
            },
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_string));
                problems.push(RecordProblem {
                    line: line_no,
                    id,
                    reason: e.to_string(),
                });
            }
        }
    }
    if !problems.is_empty() {
        return Err(IngestError::Invalid(problems));
    }
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path).map(BufReader::new).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Loads a training or evaluation corpus; every record needs a question.
pub fn load_corpus(path: &Path) -> Result<Vec<AnnotatedExample>, IngestError> {
    parse_corpus(open(path)?, true)
}

/// Loads passages for generation; questions may be absent.
pub fn load_passages(path: &Path) -> Result<Vec<AnnotatedExample>, IngestError> {
    parse_corpus(open(path)?, false)
}

pub fn write_corpus<W: io::Write>(out: &mut W, corpus: &[AnnotatedExample]) -> io::Result<()> {
    for ex in corpus {
        serde_json::to_writer(&mut *out, ex)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

//! Corpus statistics: vocabulary-rank distributions of question words and
//! dependency-path distances between clue words and the answer.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedExample, Vocabulary};
use crate::labeling::LabeledExample;

pub const RANK_BUCKET_WIDTH: usize = 100;

/// Histogram plus mean and median of a population of nonnegative integers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    /// Bucket index → count.
    pub histogram: BTreeMap<usize, usize>,
    pub mean: Option<f64>,
    /// Midpoint of the two central values for even counts.
    pub median: Option<f64>,
}

impl Summary {
    /// `bucket` maps a value to its histogram bucket.
    pub fn from_values(values: &[usize], bucket: impl Fn(usize) -> usize) -> Self {
        let mut histogram = BTreeMap::new();
        for &v in values {
            *histogram.entry(bucket(v)).or_insert(0) += 1;
        }
        let count = values.len();
        if count == 0 {
            return Summary {
                histogram,
                ..Summary::default()
            };
        }
        let sum: u128 = values.iter().map(|&v| v as u128).sum();
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let median = if count % 2 == 1 {
            sorted[count / 2] as f64
        } else {
            (sorted[count / 2 - 1] as f64 + sorted[count / 2] as f64) / 2.0
        };
        Summary {
            count,
            histogram,
            mean: Some(sum as f64 / count as f64),
            median: Some(median),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub bucket_width: usize,
    /// Rank assigned to out-of-vocabulary words (`V + 1`).
    pub oov_rank: usize,
    pub all: Summary,
    pub generated: Summary,
    pub copied: Summary,
}

/// Ranks every question token (OOV at `V + 1`) and splits the population by
/// copy label. Bucket `k` holds ranks `k·w + 1 ..= (k+1)·w`.
pub fn rank_distributions(corpus: &[LabeledExample], vocab: &Vocabulary) -> RankHistogram {
    let oov_rank = vocab.len() + 1;
    let (mut all, mut generated, mut copied) = (Vec::new(), Vec::new(), Vec::new());
    for ex in corpus {
        for (word, &is_copy) in ex.base.question.iter().zip(&ex.question_copy_label) {
            let rank = vocab.rank(word).unwrap_or(oov_rank);
            all.push(rank);
            if is_copy {
                copied.push(rank);
            } else {
                generated.push(rank);
            }
        }
    }
    let bucket = |r: usize| (r - 1) / RANK_BUCKET_WIDTH;
    RankHistogram {
        bucket_width: RANK_BUCKET_WIDTH,
        oov_rank,
        all: Summary::from_values(&all, bucket),
        generated: Summary::from_values(&generated, bucket),
        copied: Summary::from_values(&copied, bucket),
    }
}

/// Breadth-first search over the undirected parse tree from `from` to the
/// nearest token in the inclusive `span`. Each edge is labeled with the
/// dependency relation of its child token. Returns the hop count and the
/// labels in path order. Ties between equally near span tokens go to the
/// first one reached, with neighbors visited in index order.
pub fn shortest_tree_path(ex: &AnnotatedExample, from: usize, span: (usize, usize)) -> (usize, Vec<String>) {
    let n = ex.passage.len();
    let inside = |i: usize| (span.0..=span.1).contains(&i);
    if inside(from) {
        return (0, Vec::new());
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, t) in ex.passage.iter().enumerate() {
        if t.head != i {
            adj[i].push(t.head);
            adj[t.head].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
    }
    let mut parent = vec![usize::MAX; n];
    parent[from] = from;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if inside(u) {
            let mut labels = Vec::new();
            let mut cur = u;
            while cur != from {
                let p = parent[cur];
                // the child of the edge (p, cur) is whichever one is not the head
                let child = if ex.passage[cur].head == p { cur } else { p };
                labels.push(ex.passage[child].dep.clone());
                cur = p;
            }
            labels.reverse();
            return (labels.len(), labels);
        }
        for &v in &adj[u] {
            if parent[v] == usize::MAX {
                parent[v] = u;
                queue.push_back(v);
            }
        }
    }
    // Unreachable for validated trees.
    (usize::MAX, Vec::new())
}

/// Minimal absolute index difference to any span token.
pub fn sequence_distance(from: usize, span: (usize, usize)) -> usize {
    if from < span.0 {
        span.0 - from
    } else {
        from.saturating_sub(span.1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClueDistance {
    pub example: String,
    pub token: usize,
    pub tree: usize,
    pub sequence: usize,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepPathStats {
    pub records: Vec<ClueDistance>,
    pub tree: Summary,
    pub sequence: Summary,
    /// Label → occurrences on shortest paths.
    pub label_counts: BTreeMap<String, usize>,
}

impl DepPathStats {
    /// Labels by descending count, ties alphabetical.
    pub fn top_labels(&self, k: usize) -> Vec<(String, usize)> {
        let mut v: Vec<(String, usize)> = self.label_counts.iter().map(|(l, &c)| (l.clone(), c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.truncate(k);
        v
    }
}

/// Distances for every clue-labeled passage token outside the answer span.
pub fn dep_path_stats(corpus: &[LabeledExample]) -> DepPathStats {
    let records: Vec<ClueDistance> = corpus
        .par_iter()
        .flat_map_iter(|ex| {
            let base = &ex.base;
            ex.passage_clue_label
                .iter()
                .enumerate()
                .filter(move |&(i, &clue)| clue && !base.in_answer(i))
                .map(move |(i, _)| {
                    let (tree, labels) = shortest_tree_path(base, i, base.answer_span);
                    ClueDistance {
                        example: base.id.clone(),
                        token: i,
                        tree,
                        sequence: sequence_distance(i, base.answer_span),
                        labels,
                    }
                })
        })
        .collect();
    let tree: Vec<usize> = records.iter().map(|r| r.tree).collect();
    let seq: Vec<usize> = records.iter().map(|r| r.sequence).collect();
    let mut label_counts = BTreeMap::new();
    for l in records.iter().flat_map(|r| &r.labels) {
        *label_counts.entry(l.clone()).or_insert(0) += 1;
    }
    DepPathStats {
        tree: Summary::from_values(&tree, |d| d),
        sequence: Summary::from_values(&seq, |d| d),
        label_counts,
        records,
    }
}

/// `population,bucket,count` rows; `bucket` is the lowest rank in the bucket.
pub fn rank_csv(h: &RankHistogram) -> String {
    let mut s = String::from("population,bucket,count\n");
    for (name, pop) in [("all", &h.all), ("generated", &h.generated), ("copied", &h.copied)] {
        for (&b, &c) in &pop.histogram {
            s.push_str(&format!("{name},{},{c}\n", b * h.bucket_width + 1));
        }
    }
    s
}

/// `population,bucket,count` rows for tree and sequence distances.
pub fn distance_csv(d: &DepPathStats) -> String {
    let mut s = String::from("population,bucket,count\n");
    for (name, pop) in [("tree", &d.tree), ("sequence", &d.sequence)] {
        for (&b, &c) in &pop.histogram {
            s.push_str(&format!("{name},{b},{c}\n"));
        }
    }
    s
}

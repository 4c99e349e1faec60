mod common;

use std::collections::BTreeMap;

use cgcqg_core::corpus::{AnnotatedExample, Vocabulary};
use cgcqg_core::labeling::{label_example, LabeledExample};
use cgcqg_core::stats::{dep_path_stats, rank_distributions, sequence_distance, shortest_tree_path};

use common::*;

fn with_deps(id: &str, words: &[&str], heads: &[usize], deps: &[&str], span: (usize, usize), q: &str) -> AnnotatedExample {
    let mut ex = example_with_heads(id, words, heads, span, q);
    for (t, d) in ex.passage.iter_mut().zip(deps) {
        t.dep = d.to_string();
    }
    ex
}

fn hist(pairs: &[(usize, usize)]) -> BTreeMap<usize, usize> {
    pairs.iter().copied().collect()
}

#[test]
fn rank_one_generated_only() {
    let vocab = Vocabulary::from_ranked(vec!["the".into(), "cat".into()]);
    let ex = flat_example("e", "cat sat", (0, 0), "the the the");
    let l = label_example(&ex, &vocab, 1);
    let h = rank_distributions(&[l], &vocab);
    assert_eq!((h.generated.mean, h.generated.median), (Some(1.0), Some(1.0)));
    assert_eq!(h.copied.count, 0);
    assert_eq!(h.copied.mean, None);
    assert_eq!(h.all.count, 3);
}

#[test]
fn rank_histogram_hand_count() {
    // Ranks 1, 50, 100, 101, 250 and one out-of-vocabulary token (rank 251).
    let words: Vec<String> = (1..=250).map(|r| format!("w{r}")).collect();
    let vocab = Vocabulary::from_ranked(words);
    let ex = flat_example("e", "p", (0, 0), "w1 w50 w100 w101 w250 nope");
    let mut l = label_example(&ex, &vocab, 100);
    // copy flags set by hand: the 101st and the OOV token
    l.question_copy_label = vec![false, false, false, true, false, true];
    let h = rank_distributions(&[l], &vocab);
    assert_eq!(h.oov_rank, 251);
    assert_eq!(h.all.histogram, hist(&[(0, 3), (1, 1), (2, 2)]));
    assert_eq!(h.generated.histogram, hist(&[(0, 3), (2, 1)]));
    assert_eq!(h.copied.histogram, hist(&[(1, 1), (2, 1)]));
    assert_eq!(h.all.count, h.generated.count + h.copied.count);
    assert_eq!(h.generated.mean, Some((1.0 + 50.0 + 100.0 + 250.0) / 4.0));
    assert_eq!(h.generated.median, Some(75.0));
    assert_eq!(h.copied.mean, Some(176.0));
    assert_eq!(h.copied.median, Some(176.0));
    assert_eq!(h.all.median, Some(100.5));
}

#[test]
fn hand_bfs_on_a_six_node_tree() {
    // 0-1, 1-2, 2-3, 3-4, 3-5; root 1
    let ex = with_deps(
        "t",
        &["a", "b", "c", "d", "e", "f"],
        &[1, 1, 1, 2, 3, 3],
        &["l0", "ROOT", "l2", "l3", "l4", "l5"],
        (5, 5),
        "q",
    );
    let want = [(4, vec!["l0", "l2", "l3", "l5"]), (3, vec!["l2", "l3", "l5"]), (2, vec!["l3", "l5"])];
    for (from, (d, labels)) in want.iter().enumerate() {
        let (got_d, got_l) = shortest_tree_path(&ex, from, (5, 5));
        assert_eq!(got_d, *d, "from {from}");
        assert_eq!(got_l, *labels, "from {from}");
    }
    assert_eq!(shortest_tree_path(&ex, 3, (5, 5)), (1, vec!["l5".to_string()]));
    assert_eq!(shortest_tree_path(&ex, 4, (5, 5)).0, 2);
    assert_eq!(shortest_tree_path(&ex, 5, (5, 5)), (0, vec![]));
    // nearest span token wins
    assert_eq!(shortest_tree_path(&ex, 0, (2, 5)).0, 2);
    assert_eq!(sequence_distance(0, (2, 5)), 2);
}

fn three_examples() -> Vec<LabeledExample> {
    let corpus = [
        with_deps(
            "e1",
            &["Marie", "claimed", "the", "prize", "in", "Paris"],
            &[1, 1, 3, 1, 1, 4],
            &["nsubj", "ROOT", "det", "dobj", "prep", "pobj"],
            (5, 5),
            "who claimed the prize ?",
        ),
        with_deps(
            "e2",
            &["Rain", "fell", "on", "Oslo"],
            &[1, 1, 1, 2],
            &["nsubj", "ROOT", "prep", "pobj"],
            (0, 0),
            "what fell on Oslo ?",
        ),
        with_deps("e3", &["Tom", "sang"], &[1, 1], &["nsubj", "ROOT"], (1, 1), "what did Tom do ?"),
    ];
    let vocab = Vocabulary::build(&corpus, 100).unwrap();
    corpus.iter().map(|ex| label_example(ex, &vocab, 1)).collect()
}

#[test]
fn dependency_statistics_hand_count() {
    let s = dep_path_stats(&three_examples());
    let found: Vec<(&str, usize, usize, usize)> = s
        .records
        .iter()
        .map(|r| (r.example.as_str(), r.token, r.tree, r.sequence))
        .collect();
    assert_eq!(
        found,
        [("e1", 1, 2, 4), ("e1", 3, 3, 2), ("e2", 1, 1, 1), ("e2", 3, 3, 3), ("e3", 0, 1, 1)]
    );
    assert_eq!((s.tree.mean, s.tree.median), (Some(2.0), Some(2.0)));
    assert_eq!((s.sequence.mean, s.sequence.median), (Some(2.2), Some(2.0)));
    assert_eq!(s.tree.histogram, hist(&[(1, 2), (2, 1), (3, 2)]));
    assert_eq!(s.sequence.histogram, hist(&[(1, 2), (2, 1), (3, 1), (4, 1)]));
    let labels: Vec<(&str, usize)> = s.label_counts.iter().map(|(l, &c)| (l.as_str(), c)).collect();
    assert_eq!(labels, [("dobj", 1), ("nsubj", 3), ("pobj", 3), ("prep", 3)]);
    let top: Vec<String> = s.top_labels(3).into_iter().map(|(l, _)| l).collect();
    assert_eq!(top, ["nsubj", "pobj", "prep"]);
    for r in &s.records {
        assert!(r.tree >= 1);
        assert_eq!(r.labels.len(), r.tree);
    }
}

#[test]
fn single_clue_two_hops_away() {
    let ex = with_deps("s", &["x", "y", "z"], &[1, 1, 1], &["a", "ROOT", "b"], (2, 2), "x ?");
    let vocab = Vocabulary::build(std::slice::from_ref(&ex), 10).unwrap();
    let s = dep_path_stats(&[label_example(&ex, &vocab, 1)]);
    assert_eq!(s.records.len(), 1);
    assert_eq!((s.tree.mean, s.tree.median), (Some(2.0), Some(2.0)));
}

#[test]
fn aggregation_ignores_corpus_order() {
    let mut labeled = three_examples();
    let a = dep_path_stats(&labeled);
    labeled.reverse();
    let b = dep_path_stats(&labeled);
    assert_eq!((a.tree, a.sequence, a.label_counts), (b.tree, b.sequence, b.label_counts));
}

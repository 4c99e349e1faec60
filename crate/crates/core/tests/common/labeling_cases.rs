//! Hand-built labeling cases and an independent rule oracle.

use std::collections::BTreeSet;

use cgcqg_core::corpus::{stopword_set, AnnotatedExample, Vocabulary};

use super::flat_example;

/// Frequency threshold used with [`case_vocab`].
pub const CASE_R_H: usize = 3;

/// `river`, `city` and `year` are the frequent words; the rest are ranked
/// beyond the threshold.
pub fn case_vocab() -> Vocabulary {
    Vocabulary::from_ranked(
        [
            "river", "city", "year", "the", "bridge", "paris", "tower", "built", "war", "museum", "engineer", "eiffel",
            "france", "seine", "1889", "opened",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    )
}

pub fn worked_example() -> AnnotatedExample {
    flat_example(
        "worked",
        "Today , Barack Obama gives a speech on democracy in the White House",
        (2, 3),
        "The speech in the White House is given by whom ?",
    )
}

/// 150 filler words ranked ahead of everything in the worked example, so
/// its content words all fall beyond a threshold of 100.
pub fn worked_vocab() -> Vocabulary {
    let mut words: Vec<String> = (0..150).map(|i| format!("filler{i}")).collect();
    words.extend(
        "today barack obama gives a speech on democracy in the white house is given by whom"
            .split(' ')
            .map(String::from),
    );
    Vocabulary::from_ranked(words)
}

pub fn hand_cases() -> Vec<AnnotatedExample> {
    let c = |id: &str, p: &str, span: (usize, usize), q: &str| flat_example(id, p, span, q);
    vec![
        c("h01", "The Eiffel Tower was built in 1889 .", (6, 6), "When was the Eiffel Tower built ?"),
        c("h02", "The river flows through the city .", (1, 1), "Which river flows through the city ?"),
        c("h03", "Paris is the capital of France .", (0, 0), "What is the capital of France ?"),
        c("h04", "It was a cold year .", (4, 4), "When was it cold ?"),
        c("h05", "The bridge over the Seine opened in 1889 .", (7, 7), "When did the bridge open ?"),
        c("h06", "Museum museum MUSEUM .", (0, 0), "Which museum ?"),
        c("h07", "of the and to", (0, 0), "the and of ?"),
        c("h08", "An engineer designed the tower .", (0, 1), "Who designed the tower ?"),
        c("h09", "The war ended after four years .", (4, 5), "How long did the war last ?"),
        c("h10", "Zorblat visited Quux in spring .", (2, 2), "Where did Zorblat go in spring ?"),
        c("h11", "The city and the river share a name .", (1, 1), "Which city shares a name with the river ?"),
        c("h12", "Tower , tower , tower !", (0, 0), "Tower ?"),
        c("h13", "Built in France , the tower stands .", (2, 2), "Where was the tower built ?"),
        c("h14", "A year passed .", (0, 1), "What passed ?"),
        c("h15", "The museum opened in 1889 in Paris .", (4, 4), "When did the Paris museum open ?"),
        c("h16", "Seine water is cold .", (0, 0), "Which river is cold ?"),
        c("h17", "Engineers built bridges .", (0, 0), "Who built bridges ?"),
        c("h18", "The Eiffel engineer built the Eiffel tower .", (1, 2), "Which Eiffel engineer ?"),
        c("h19", "Nothing here matches .", (0, 0), "Why ?"),
        c("h20", "In 1889 , Paris opened the tower .", (1, 1), "What did Paris open in 1889 ?"),
    ]
}

/// Expected labels computed straight from the rules: lowercase exact
/// match, exclusion of listed stopwords and of tokens without any letter or
/// digit, and (for copy labels only) a rank beyond
/// `r_h` or absence from the vocabulary.
pub struct Expected {
    pub copy: Vec<bool>,
    pub alignment: Vec<Vec<usize>>,
    pub clue: Vec<bool>,
}

pub fn rule_oracle(ex: &AnnotatedExample, vocab: &Vocabulary, r_h: usize) -> Expected {
    let list = stopword_set();
    let stop_word = |w: &str| list.contains(w) || w.chars().all(|c| !c.is_alphanumeric());
    let lower = |s: &str| s.to_lowercase();
    let passage: Vec<String> = ex.passage.iter().map(|t| lower(&t.text)).collect();
    let question: Vec<String> = ex.question.iter().map(|w| lower(w)).collect();
    let ranked: Vec<&String> = vocab.words().iter().collect();
    let rank = |w: &str| ranked.iter().position(|x| x.as_str() == w).map(|i| i + 1);

    let mut copy = Vec::new();
    let mut alignment = Vec::new();
    for q in &question {
        let positions: Vec<usize> = (0..passage.len()).filter(|&i| passage[i] == *q).collect();
        let ok = !positions.is_empty() && !stop_word(q) && rank(q).is_none_or(|r| r > r_h);
        copy.push(ok);
        alignment.push(if ok { positions } else { Vec::new() });
    }
    let qset: BTreeSet<&String> = question.iter().collect();
    let clue = passage
        .iter()
        .map(|p| !stop_word(p) && qset.contains(p))
        .collect();
    Expected { copy, alignment, clue }
}

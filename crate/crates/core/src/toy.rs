//! Deterministic synthetic corpus for tests and smoke runs.
//!
//! Passages come from two templated sentence shapes with fixed parse trees.
//! Questions reuse names, objects and places from the passage (copy
//! candidates) and add base-form verbs and question words that never occur
//! in passages (generated tokens).

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::ModelConfig;
use crate::corpus::{AnnotatedExample, AnnotatedToken};
use crate::rng::{RngTree, Stream};

const NAMES: &[&str] = &["Alice", "Bruno", "Chen", "Dara", "Emeka", "Farah", "Goran", "Hana"];
const PLACES: &[&str] = &["Paris", "Lagos", "Quito", "Oslo", "Hanoi", "Lima", "Cairo", "Perth"];
const OBJECTS: &[&str] = &["bridge", "mural", "engine", "garden", "violin", "ship", "clock", "tower"];
const ROLES: &[&str] = &["farmer", "pilot", "teacher", "doctor", "sailor", "painter"];
/// (past, base)
const VERBS: &[(&str, &str)] = &[
    ("built", "build"),
    ("painted", "paint"),
    ("repaired", "repair"),
    ("designed", "design"),
    ("sold", "sell"),
    ("found", "find"),
];

struct Tok<'a> {
    text: &'a str,
    pos: &'a str,
    ner: &'a str,
    dep: &'a str,
    head: usize,
}

fn t<'a>(text: &'a str, pos: &'a str, ner: &'a str, dep: &'a str, head: usize) -> Tok<'a> {
    Tok {
        text,
        pos,
        ner,
        dep,
        head,
    }
}

fn annotate(toks: &[Tok<'_>]) -> Vec<AnnotatedToken> {
    toks.iter()
        .map(|k| AnnotatedToken {
            text: k.text.to_string(),
            pos: k.pos.to_string(),
            ner: k.ner.to_string(),
            dep: k.dep.to_string(),
            head: k.head,
            is_lower: !k.text.chars().any(char::is_uppercase),
            is_digit: k.text.chars().all(|c| c.is_ascii_digit()),
            like_num: false,
        })
        .collect()
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty inventory")
}

/// `n` examples drawn from the seeded toy-data stream. Ids are `toy-{i}`.
pub fn make_toy_data(n: usize, seed: u64) -> Vec<AnnotatedExample> {
    let mut rng = RngTree::new(seed).stream(Stream::ToyData);
    (0..n)
        .map(|i| {
            let name = pick(&mut rng, NAMES);
            let place = pick(&mut rng, PLACES);
            let object = pick(&mut rng, OBJECTS);
            let role = pick(&mut rng, ROLES);
            let (past, base) = *VERBS.choose(&mut rng).expect("verbs");
            let kind = rng.gen_range(0..3);
            let (passage, span, question) = if rng.gen_bool(0.5) {
                // Name past the object in place .
                let toks = [
                    t(name, "NNP", "PERSON", "nsubj", 1),
                    t(past, "VBD", "", "ROOT", 1),
                    t("the", "DT", "", "det", 3),
                    t(object, "NN", "", "dobj", 1),
                    t("in", "IN", "", "prep", 1),
                    t(place, "NNP", "GPE", "pobj", 4),
                    t(".", ".", "", "punct", 1),
                ];
                let (span, q) = match kind {
                    0 => ((0, 0), format!("who {past} the {object} in {place} ?")),
                    1 => ((5, 5), format!("where did {name} {base} the {object} ?")),
                    _ => ((2, 3), format!("what did {name} {base} in {place} ?")),
                };
                (annotate(&toks), span, q)
            } else {
                // Name , a role from place , past the object .
                let toks = [
                    t(name, "NNP", "PERSON", "nsubj", 7),
                    t(",", ",", "", "punct", 0),
                    t("a", "DT", "", "det", 3),
                    t(role, "NN", "", "appos", 0),
                    t("from", "IN", "", "prep", 3),
                    t(place, "NNP", "GPE", "pobj", 4),
                    t(",", ",", "", "punct", 0),
                    t(past, "VBD", "", "ROOT", 7),
                    t("the", "DT", "", "det", 9),
                    t(object, "NN", "", "dobj", 7),
                    t(".", ".", "", "punct", 7),
                ];
                let (span, q) = match kind {
                    0 => ((0, 0), format!("who {past} the {object} ?")),
                    1 => ((5, 5), format!("where is {name} from ?")),
                    _ => ((8, 9), format!("what did the {role} {base} ?")),
                };
                (annotate(&toks), span, q)
            };
            AnnotatedExample {
                id: format!("toy-{i}"),
                passage,
                answer_span: span,
                question: words(&question),
            }
        })
        .collect()
}

/// Small, dropout-free configuration under which the toy corpus can be fit
/// to near-zero loss in a few minutes on one CPU core.
pub fn overfit_config() -> ModelConfig {
    ModelConfig {
        r_h: 10,
        r_l: 1000,
        n_target: 50,
        vocab_max: 1000,
        word_dim: 24,
        tier_dim: 4,
        feat_dim: 4,
        enc_hidden: 32,
        dec_hidden: 32,
        attn_hidden: 32,
        readout_dim: 24,
        gcn_layers: 3,
        gcn_hidden: 64,
        dropout: 0.0,
        lr: 0.01,
        batch_size: 8,
        epochs: 300,
        ema_decay: 0.99,
        beam_width: 1,
        max_len: 15,
        seed: 7,
        ..ModelConfig::default()
    }
}

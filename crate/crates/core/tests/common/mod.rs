#![allow(dead_code)]

pub mod gradsuite;
pub mod labeling_cases;
pub mod structural;

use cgcqg_core::corpus::{AnnotatedExample, AnnotatedToken};
use cgcqg_core::model::Prepared;
use cgcqg_core::tensor::{ParamId, Tensor};
use cgcqg_core::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn token(text: &str, head: usize, dep: &str) -> AnnotatedToken {
    AnnotatedToken {
        text: text.into(),
        pos: if text.chars().next().is_some_and(char::is_uppercase) {
            "NNP".into()
        } else {
            "NN".into()
        },
        ner: String::new(),
        dep: dep.into(),
        head,
        is_lower: !text.chars().any(char::is_uppercase),
        is_digit: !text.is_empty() && text.chars().all(|c| c.is_ascii_digit()),
        like_num: false,
    }
}

/// Example with explicit heads; every token gets dep label `dep`.
pub fn example_with_heads(id: &str, words: &[&str], heads: &[usize], span: (usize, usize), question: &str) -> AnnotatedExample {
    AnnotatedExample {
        id: id.into(),
        passage: words
            .iter()
            .zip(heads)
            .map(|(w, &h)| token(w, h, "dep"))
            .collect(),
        answer_span: span,
        question: question.split_whitespace().map(String::from).collect(),
    }
}

/// Passage whose tokens all attach to token 0.
pub fn flat_example(id: &str, passage: &str, span: (usize, usize), question: &str) -> AnnotatedExample {
    let words: Vec<&str> = passage.split_whitespace().collect();
    let heads = vec![0; words.len()];
    example_with_heads(id, &words, &heads, span, question)
}

pub const TINY_WORDS: [&str; 12] = [
    "alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa", "lam", "mu",
];

/// Five-token passages over a twelve-word vocabulary.
pub fn tiny_corpus() -> Vec<AnnotatedExample> {
    let w = TINY_WORDS;
    vec![
        example_with_heads("t0", &[w[0], w[1], w[2], w[3], w[4]], &[1, 1, 1, 2, 3], (3, 4), "kappa beta gamma mu"),
        example_with_heads("t1", &[w[5], w[6], w[0], w[7], w[1]], &[2, 2, 2, 2, 3], (0, 0), "kappa lam eta theta"),
        example_with_heads("t2", &[w[8], w[2], w[9], w[10], w[11]], &[1, 1, 1, 2, 2], (4, 4), "kappa iota alpha"),
    ]
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        r_h: 2,
        r_l: 6,
        n_target: 4,
        vocab_max: 12,
        word_dim: 6,
        tier_dim: 3,
        feat_dim: 2,
        enc_hidden: 8,
        dec_hidden: 8,
        attn_hidden: 8,
        readout_dim: 4,
        gcn_layers: 2,
        gcn_hidden: 8,
        dropout: 0.0,
        seed: 3,
        ..ModelConfig::default()
    }
}

pub fn tiny_model() -> (Model, Vec<Prepared>) {
    let (model, labeled) = Model::from_corpus(tiny_config(), &tiny_corpus(), None).expect("tiny model");
    let prepared = labeled.iter().map(|l| model.prepare(l)).collect();
    (model, prepared)
}

/// Overwrites every parameter with uniform(−scale, scale) draws.
pub fn randomize(model: &mut Model, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = model.params.ids().collect();
    for id in ids {
        for v in model.params.value_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

pub fn set(model: &mut Model, name: &str, value: Tensor) {
    let id = model.params.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    assert_eq!(model.params.value(id).shape(), value.shape(), "{name}");
    *model.params.value_mut(id) = value;
}

pub fn shape_of(model: &Model, name: &str) -> Vec<usize> {
    model.params.get(name).unwrap_or_else(|| panic!("no parameter {name}")).shape().to_vec()
}

/// Zeroes every parameter, then wires the network so that the encoder state
/// peaks at the answer-start token, attention concentrates there, and the
/// copy gate saturates. Greedy decoding must then copy that token.
pub fn rig_copy_of_answer_start(model: &mut Model) {
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        model.params.value_mut(id).data_mut().fill(0.0);
    }
    // B row of the BIO table is all ones; every other embedding is zero.
    let bio = shape_of(model, "emb.bio");
    let mut t = Tensor::zeros(&bio);
    for j in 0..bio[1] {
        t.data_mut()[j] = 1.0;
    }
    set(model, "emb.bio", t);
    for dir in ["enc.fw", "enc.bw"] {
        let name = format!("{dir}.wc_x");
        let s = shape_of(model, &name);
        let mut t = Tensor::zeros(&s);
        for i in 0..s[0] {
            t.data_mut()[i * s[1]] = 10.0;
        }
        set(model, &name, t);
    }
    let h = model.config.enc_hidden;
    let s = shape_of(model, "dec.attn.wh");
    let mut wh = Tensor::zeros(&s);
    wh.data_mut()[0] = 1.0;
    wh.data_mut()[h * s[1]] = 1.0;
    set(model, "dec.attn.wh", wh);
    let s = shape_of(model, "dec.attn.v");
    let mut v = Tensor::zeros(&s);
    v.data_mut()[0] = 100.0;
    set(model, "dec.attn.v", v);
    set(model, "dec.gate.b", Tensor::vector(vec![50.0]));
}

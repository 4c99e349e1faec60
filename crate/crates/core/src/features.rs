//! Per-token input features.
//!
//! A token vector is the concatenation, in this order, of
//!
//! | slot      | width      |
//! |-----------|------------|
//! | word      | `word_dim` |
//! | NER       | `feat_dim` |
//! | POS       | `feat_dim` |
//! | DEP       | `feat_dim` |
//! | is_lower  | `feat_dim` |
//! | is_digit  | `feat_dim` |
//! | like_num  | `feat_dim` |
//! | answer BIO| `feat_dim` |
//! | tier      | `tier_dim` |
//! | clue      | `feat_dim` |
//!
//! The clue predictor consumes everything but the last slot. With masking on,
//! tier-L words read the shared `<l>` row of the word table.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ModelConfig};
use crate::corpus::{normalize, AnnotatedExample, FrequencyTier, TierThresholds, Vocabulary};
use crate::error::{Error, Result};
use crate::labeling::tag_answer_bio;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Closed tag set. Index 0 is reserved for tags never seen in training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagInventory(Vec<String>);

impl TagInventory {
    pub const UNK_TAG: &'static str = "<unk-tag>";

    pub fn build<'a>(tags: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen: Vec<String> = tags.into_iter().map(str::to_string).collect();
        seen.sort();
        seen.dedup();
        seen.retain(|t| t != Self::UNK_TAG);
        let mut all = vec![Self::UNK_TAG.to_string()];
        all.extend(seen);
        TagInventory(all)
    }

    pub fn index(&self, tag: &str) -> usize {
        self.0[1..].binary_search_by(|t| t.as_str().cmp(tag)).map_or(0, |i| i + 1)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVocab {
    pub pos: TagInventory,
    pub ner: TagInventory,
    pub dep: TagInventory,
}

impl FeatureVocab {
    pub fn build(corpus: &[AnnotatedExample]) -> Self {
        let tokens = || corpus.iter().flat_map(|ex| ex.passage.iter());
        FeatureVocab {
            pos: TagInventory::build(tokens().map(|t| t.pos.as_str())),
            ner: TagInventory::build(tokens().map(|t| t.ner.as_str())),
            dep: TagInventory::build(tokens().map(|t| t.dep.as_str())),
        }
    }
}

/// Row indices of every feature table for one passage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassageFeatures {
    pub word: Vec<usize>,
    pub ner: Vec<usize>,
    pub pos: Vec<usize>,
    pub dep: Vec<usize>,
    pub lower: Vec<usize>,
    pub digit: Vec<usize>,
    pub num: Vec<usize>,
    pub bio: Vec<usize>,
    pub tier: Vec<usize>,
}

impl PassageFeatures {
    pub fn len(&self) -> usize {
        self.word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word.is_empty()
    }
}

/// Word-table row for a surface form: `<l>` for tier-L words when masking,
/// otherwise the word's own row (or `<UNK>`).
pub fn word_input_id(word: &str, vocab: &Vocabulary, thresholds: &TierThresholds, mask_low_freq: bool) -> usize {
    let rank = vocab.rank(word);
    if mask_low_freq && thresholds.tier_of_rank(rank) == FrequencyTier::L {
        Vocabulary::LOW_ID
    } else {
        vocab.id(word)
    }
}

pub fn passage_features(
    ex: &AnnotatedExample,
    vocab: &Vocabulary,
    tags: &FeatureVocab,
    thresholds: &TierThresholds,
    mask_low_freq: bool,
) -> PassageFeatures {
    let bio = tag_answer_bio(ex);
    let toks = &ex.passage;
    PassageFeatures {
        word: toks
            .iter()
            .map(|t| word_input_id(&t.text, vocab, thresholds, mask_low_freq))
            .collect(),
        ner: toks.iter().map(|t| tags.ner.index(&t.ner)).collect(),
        pos: toks.iter().map(|t| tags.pos.index(&t.pos)).collect(),
        dep: toks.iter().map(|t| tags.dep.index(&t.dep)).collect(),
        lower: toks.iter().map(|t| t.is_lower as usize).collect(),
        digit: toks.iter().map(|t| t.is_digit as usize).collect(),
        num: toks.iter().map(|t| t.like_num as usize).collect(),
        bio: bio.iter().map(|b| b.index()).collect(),
        tier: toks
            .iter()
            .map(|t| thresholds.tier_of_rank(vocab.rank(&t.text)).index())
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingTables {
    pub word: ParamId,
    pub ner: ParamId,
    pub pos: ParamId,
    pub dep: ParamId,
    pub lower: ParamId,
    pub digit: ParamId,
    pub num: ParamId,
    pub bio: ParamId,
    pub tier: ParamId,
    pub clue: ParamId,
}

const TABLE_NAMES: [&str; 10] = [
    "emb.word", "emb.ner", "emb.pos", "emb.dep", "emb.lower", "emb.digit", "emb.num", "emb.bio", "emb.tier",
    "emb.clue",
];

/// Range of the random initialization of every embedding row.
pub const EMBEDDING_INIT: f64 = 0.1;

impl EmbeddingTables {
    /// Adds all tables to `store`. `word_table` comes from
    /// [`init_word_table`]; the rest are drawn from `rng`.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        tags: &FeatureVocab,
        word_table: Tensor,
        rng: &mut R,
    ) -> Result<Self> {
        let f = cfg.feat_dim;
        let shapes = [
            (tags.ner.len(), f),
            (tags.pos.len(), f),
            (tags.dep.len(), f),
            (2, f),
            (2, f),
            (2, f),
            (3, f),
            (3, cfg.tier_dim),
            (2, f),
        ];
        let mut ids = vec![store.add(TABLE_NAMES[0], word_table)?];
        for (name, (rows, cols)) in TABLE_NAMES[1..].iter().zip(shapes) {
            ids.push(store.add(name, Tensor::uniform(&[rows, cols], EMBEDDING_INIT, rng))?);
        }
        Ok(Self::from_ids(&ids))
    }

    pub fn lookup(store: &ParamStore) -> Result<Self> {
        let ids = TABLE_NAMES
            .iter()
            .map(|n| store.id(n).ok_or_else(|| Error::Invalid(format!("missing parameter `{n}`"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_ids(&ids))
    }

    fn from_ids(ids: &[ParamId]) -> Self {
        EmbeddingTables {
            word: ids[0],
            ner: ids[1],
            pos: ids[2],
            dep: ids[3],
            lower: ids[4],
            digit: ids[5],
            num: ids[6],
            bio: ids[7],
            tier: ids[8],
            clue: ids[9],
        }
    }

    /// `n × base_feature_width` matrix without the clue slot.
    pub fn embed_base(&self, g: &mut Graph<'_>, feats: &PassageFeatures) -> Result<Var> {
        if feats.is_empty() {
            return Err(Error::EmptySequence("embed_passage"));
        }
        let slots = [
            (self.word, &feats.word),
            (self.ner, &feats.ner),
            (self.pos, &feats.pos),
            (self.dep, &feats.dep),
            (self.lower, &feats.lower),
            (self.digit, &feats.digit),
            (self.num, &feats.num),
            (self.bio, &feats.bio),
            (self.tier, &feats.tier),
        ];
        let mut parts = Vec::with_capacity(slots.len());
        for (table, ids) in slots {
            parts.push(g.gather_param(table, ids)?);
        }
        Ok(g.concat(&parts, 1)?)
    }

    /// Appends the clue slot. `clue` is `n × 2` with rows one-hot over
    /// (not clue, clue); a straight-through sample keeps the path
    /// differentiable.
    pub fn append_clue(&self, g: &mut Graph<'_>, base: Var, clue: Var) -> Result<Var> {
        let table = g.param(self.clue);
        let slot = g.matmul(clue, table)?;
        Ok(g.concat(&[base, slot], 1)?)
    }

    /// Word-table rows for a sequence of previous decoder outputs.
    pub fn embed_words(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<Var> {
        Ok(g.gather_param(self.word, ids)?)
    }
}

/// One-hot rows over (not clue, clue) for a fixed indicator sequence.
pub fn clue_one_hot(indicators: &[bool]) -> Tensor {
    let mut data = Vec::with_capacity(indicators.len() * 2);
    for &c in indicators {
        data.extend_from_slice(if c { &[0.0, 1.0] } else { &[1.0, 0.0] });
    }
    Tensor::matrix(indicators.len(), 2, data).expect("two columns")
}

/// Builds the word table: rows of words listed in `vectors` are copied from
/// the file, every other row is drawn from uniform(−0.1, 0.1).
///
/// The file holds one word per line followed by `dim` numbers.
pub fn init_word_table<R: Rng + ?Sized>(
    vocab: &Vocabulary,
    dim: usize,
    vectors: Option<&Path>,
    rng: &mut R,
) -> Result<Tensor> {
    let mut table = Tensor::uniform(&[vocab.table_rows(), dim], EMBEDDING_INIT, rng);
    let Some(path) = vectors else {
        return Ok(table);
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let wanted: HashMap<String, usize> = (Vocabulary::SPECIALS.len()..vocab.table_rows())
        .filter_map(|id| vocab.token_at(id).map(|w| (w.to_string(), id)))
        .collect();
    let mut covered = 0usize;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(ConfigError::Field {
                field: "word_dim",
                reason: format!(
                    "{} line {} has {} values, expected {dim}",
                    path.display(),
                    lineno + 1,
                    values.len()
                ),
            }
            .into());
        }
        let Some(&row) = wanted.get(&normalize(word)) else { continue };
        let start = row * dim;
        for (j, v) in values.iter().enumerate() {
            table.data_mut()[start + j] = v.parse().map_err(|_| {
                Error::Invalid(format!("{} line {}: bad number `{v}`", path.display(), lineno + 1))
            })?;
        }
        covered += 1;
    }
    log::info!("word vectors cover {covered} of {} vocabulary words", vocab.len());
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::{example, tok};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            word_dim: 4,
            feat_dim: 2,
            tier_dim: 3,
            r_h: 1,
            r_l: 2,
            ..ModelConfig::default()
        }
    }

    fn setup() -> (ModelConfig, Vocabulary, FeatureVocab, ParamStore, EmbeddingTables) {
        let cfg = small_config();
        let corpus = vec![example("a", "x x x y y z w v", (0, 0), "q")];
        let vocab = Vocabulary::build(&corpus, 100).unwrap();
        let tags = FeatureVocab::build(&corpus);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let word = init_word_table(&vocab, cfg.word_dim, None, &mut rng).unwrap();
        let tables = EmbeddingTables::register(&mut store, &cfg, &tags, word, &mut rng).unwrap();
        (cfg, vocab, tags, store, tables)
    }

    #[test]
    fn unknown_tag_maps_to_reserved_row() {
        let inv = TagInventory::build(["NN", "VB", "NN"]);
        assert_eq!(inv.tags(), &["<unk-tag>", "NN", "VB"]);
        assert_eq!(inv.index("VB"), 2);
        assert_eq!(inv.index("JJ"), 0);
    }

    #[test]
    fn masking_and_widths() {
        let (cfg, vocab, tags, store, tables) = setup();
        let th = TierThresholds::new(cfg.r_h, cfg.r_l).unwrap();
        // x: rank 1 (H), y: rank 2 (M), z, w, v: rank > 2 (L)
        let ex = example("b", "x y z w zz", (1, 1), "q");
        let feats = passage_features(&ex, &vocab, &tags, &th, true);
        assert_eq!(feats.word[2], Vocabulary::LOW_ID);
        assert_eq!(feats.word[3], Vocabulary::LOW_ID);
        assert_eq!(feats.word[4], Vocabulary::LOW_ID, "OOV is tier L");
        assert_eq!(feats.word[0], vocab.id("x"));
        let mut g = Graph::new(&store);
        let base = tables.embed_base(&mut g, &feats).unwrap();
        assert_eq!(g.shape(base), &[5, cfg.base_feature_width()]);
        let v = g.value(base);
        assert_eq!(&v.row(2)[..4], &v.row(3)[..4]);
        assert_eq!(&v.row(0)[..4], store.value(tables.word).row(vocab.id("x")));
        let unmasked = passage_features(&ex, &vocab, &tags, &th, false);
        assert_eq!(unmasked.word[2], vocab.id("z"));
        assert_eq!(unmasked.word[4], Vocabulary::UNK_ID);
    }

    #[test]
    fn clue_toggle_changes_only_last_slot() {
        let (cfg, vocab, tags, store, tables) = setup();
        let th = TierThresholds::new(cfg.r_h, cfg.r_l).unwrap();
        let ex = example("c", "x y z", (0, 0), "q");
        let feats = passage_features(&ex, &vocab, &tags, &th, true);
        let mut g = Graph::new(&store);
        let base = tables.embed_base(&mut g, &feats).unwrap();
        let off = g.constant(clue_one_hot(&[false, false, false]));
        let on = g.constant(clue_one_hot(&[false, true, false]));
        let a = tables.append_clue(&mut g, base, off).unwrap();
        let b = tables.append_clue(&mut g, base, on).unwrap();
        let (a, b) = (g.value(a), g.value(b));
        assert_eq!(a.cols(), cfg.encoder_input_width());
        let w = a.cols();
        for r in 0..3 {
            for c in 0..w {
                let same = a.get(r, c) == b.get(r, c);
                assert_eq!(same, r != 1 || c < w - cfg.feat_dim, "row {r} col {c}");
            }
        }
    }

    #[test]
    fn masked_gradient_rows() {
        let (cfg, vocab, tags, store, tables) = setup();
        let th = TierThresholds::new(cfg.r_h, cfg.r_l).unwrap();
        let ex = AnnotatedExample {
            id: "g".into(),
            passage: ["x", "y", "z", "w", "v", "x"].iter().map(|w| tok(w, 0)).collect(),
            answer_span: (0, 0),
            question: vec!["q".into()],
        };
        let feats = passage_features(&ex, &vocab, &tags, &th, true);
        let mut g = Graph::new(&store);
        let base = tables.embed_base(&mut g, &feats).unwrap();
        let loss = g.sum(base).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut rows = grads.touched_rows(tables.word);
        rows.sort();
        // x and y keep their rows; z, w, v share <l>
        assert_eq!(rows, vec![Vocabulary::LOW_ID, vocab.id("x"), vocab.id("y")]);
    }

    #[test]
    fn word_table_from_vectors_file() {
        let corpus = vec![example("a", "the cat", (0, 0), "q")];
        let vocab = Vocabulary::build(&corpus, 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        std::fs::write(&path, "the 0.5 -1 2\nzebra 1 1 1\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = init_word_table(&vocab, 3, Some(&path), &mut rng).unwrap();
        assert_eq!(t.row(vocab.id("the")), &[0.5, -1.0, 2.0]);
        assert!(t.row(vocab.id("cat")).iter().all(|x| x.abs() < 0.1));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = init_word_table(&vocab, 300, Some(&path), &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(ConfigError::Field { field: "word_dim", .. })));
    }

    #[test]
    fn random_table_is_reproducible() {
        let corpus = vec![example("a", "the cat", (0, 0), "q")];
        let vocab = Vocabulary::build(&corpus, 100).unwrap();
        let a = init_word_table(&vocab, 5, None, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = init_word_table(&vocab, 5, None, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}

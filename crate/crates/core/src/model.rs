//! The assembled network, its inputs and its checkpoint file.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "CGCQGCK\n"
//! version    u32      currently 1
//! header_len u64
//! header     JSON     {"config", "vocab", "reduced", "tags"}
//! params     ParamStore binary (see `ParamStore::write_to`)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clue::{build_adjacency, predict_clues, ClueMode, ClueParams, CluePrediction, DependencyAdjacency};
use crate::config::ModelConfig;
use crate::corpus::{normalize, AnnotatedExample, ReducedTargetVocab, TierThresholds, Vocabulary};
use crate::decoder::{generation_mask, DecoderDims, DecoderParams, Dropout, ExtendedDistribution, SourceContext, StepOutput};
use crate::encoder::{BiGru, EncoderOutput};
use crate::error::{Error, Result};
use crate::features::{clue_one_hot, init_word_table, passage_features, word_input_id, EmbeddingTables, FeatureVocab, PassageFeatures};
use crate::labeling::{label_corpus, LabeledExample};
use crate::rng::{RngTree, Stream, StreamRng};
use crate::tensor::{Graph, ParamStore, Var};

/// Range of the uniform initialization of recurrent and linear weights.
pub const INIT_WEIGHT: f64 = 0.08;

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

const MAGIC: &[u8; 8] = b"CGCQGCK\n";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub emb: EmbeddingTables,
    pub encoder: BiGru,
    pub decoder: DecoderParams,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub reduced: ReducedTargetVocab,
    pub tags: FeatureVocab,
    pub params: ParamStore,
    pub layout: Layout,
    pub clue: ClueParams,
    thresholds: TierThresholds,
    vocab_mask: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    reduced: ReducedTargetVocab,
    tags: FeatureVocab,
}

/// Everything the network needs from one example, precomputed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub features: PassageFeatures,
    pub adjacency: DependencyAdjacency,
    /// Normalized passage tokens, the copy targets.
    pub passage: Vec<String>,
    pub clue_labels: Vec<bool>,
    /// Word-table rows of `<SOS>` and the gold question tokens.
    pub decoder_inputs: Vec<usize>,
    /// Reduced-vocabulary targets, ending with `<EOS>`.
    pub targets: Vec<usize>,
    /// Per target step; the final `<EOS>` step is never a copy.
    pub copy_labels: Vec<bool>,
    pub alignment: Vec<Vec<usize>>,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.passage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passage.is_empty()
    }

    pub fn has_question(&self) -> bool {
        !self.targets.is_empty()
    }
}

/// Randomness of a training forward pass.
pub struct TrainNoise<'r> {
    pub dropout: &'r mut StreamRng,
    pub gumbel: &'r mut StreamRng,
}

pub enum Mode<'r> {
    Train(TrainNoise<'r>),
    Eval,
}

/// Output of the passage side: clue prediction, encoder and initial state.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub clue: CluePrediction,
    pub encoder: EncoderOutput,
    pub source: SourceContext,
    pub s0: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub clue: Var,
    pub gen: Var,
    pub gate: Var,
    pub total: Var,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub encoded: Encoded,
    pub steps: Vec<StepOutput>,
    pub losses: LossVars,
}

/// Values a forward pass produced, for checking the loss independently.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Probability of the clue class per passage token.
    pub clue_probs: Vec<f64>,
    pub steps: Vec<ExtendedDistribution>,
}

impl Forward {
    pub fn trace(&self, g: &Graph<'_>) -> ForwardTrace {
        ForwardTrace {
            clue_probs: self.encoded.clue.clue_probabilities(g),
            steps: self.steps.iter().map(|s| s.distribution(g)).collect(),
        }
    }
}

impl Model {
    /// Builds vocabularies from a training corpus, labels it and initializes
    /// fresh parameters from the `Init` stream of `config.seed`.
    pub fn from_corpus(
        config: ModelConfig,
        corpus: &[AnnotatedExample],
        vectors: Option<&Path>,
    ) -> Result<(Model, Vec<LabeledExample>)> {
        config.validate()?;
        let vocab = Vocabulary::build(corpus, config.vocab_max)?;
        let (labeled, reduced) = label_corpus(corpus, &vocab, config.r_h, config.n_target);
        let tags = FeatureVocab::build(corpus);
        let model = Model::init(config, vocab, reduced, tags, vectors)?;
        Ok((model, labeled))
    }

    pub fn init(
        config: ModelConfig,
        vocab: Vocabulary,
        reduced: ReducedTargetVocab,
        tags: FeatureVocab,
        vectors: Option<&Path>,
    ) -> Result<Model> {
        config.validate()?;
        let mut rng = RngTree::new(config.seed).stream(Stream::Init);
        let mut store = ParamStore::new();
        let word = init_word_table(&vocab, config.word_dim, vectors, &mut rng)?;
        let emb = EmbeddingTables::register(&mut store, &config, &tags, word, &mut rng)?;
        let clue = ClueParams::register(
            &mut store,
            config.base_feature_width(),
            config.gcn_hidden,
            config.gcn_layers,
            INIT_WEIGHT,
            &mut rng,
        )?;
        let encoder = BiGru::register(
            &mut store,
            "enc",
            config.encoder_input_width(),
            config.enc_hidden,
            INIT_WEIGHT,
            &mut rng,
        )?;
        let decoder = DecoderParams::register(&mut store, Self::dims(&config, &reduced), INIT_WEIGHT, &mut rng)?;
        Self::assemble(config, vocab, reduced, tags, store, Layout { emb, encoder, decoder }, clue)
    }

    fn dims(config: &ModelConfig, reduced: &ReducedTargetVocab) -> DecoderDims {
        DecoderDims {
            word: config.word_dim,
            enc_hidden: config.enc_hidden,
            hidden: config.dec_hidden,
            attn: config.attn_hidden,
            readout: config.readout_dim,
            vocab: reduced.len(),
        }
    }

    fn assemble(
        config: ModelConfig,
        vocab: Vocabulary,
        reduced: ReducedTargetVocab,
        tags: FeatureVocab,
        params: ParamStore,
        layout: Layout,
        clue: ClueParams,
    ) -> Result<Model> {
        let thresholds = TierThresholds::new(config.r_h, config.r_l)?;
        let vocab_mask = generation_mask(reduced.len());
        Ok(Model {
            config,
            vocab,
            reduced,
            tags,
            params,
            layout,
            clue,
            thresholds,
            vocab_mask,
        })
    }

    /// The same model with different parameter values (e.g. EMA weights).
    pub fn with_params(&self, params: ParamStore) -> Result<Model> {
        self.params.check_same_layout(&params)?;
        Ok(Model {
            params,
            ..self.clone()
        })
    }

    pub fn thresholds(&self) -> &TierThresholds {
        &self.thresholds
    }

    fn word_id(&self, word: &str) -> usize {
        word_input_id(word, &self.vocab, &self.thresholds, self.config.mask_low_freq)
    }

    /// Decoder input row for a previously emitted surface token.
    pub fn decoder_input_id(&self, token: &str) -> usize {
        if token == crate::corpus::SOS {
            Vocabulary::SOS_ID
        } else {
            self.word_id(token)
        }
    }

    /// Passage-side inputs only; used for generation.
    pub fn prepare_passage(&self, ex: &AnnotatedExample) -> Prepared {
        Prepared {
            id: ex.id.clone(),
            features: passage_features(ex, &self.vocab, &self.tags, &self.thresholds, self.config.mask_low_freq),
            adjacency: build_adjacency(&ex.heads()),
            passage: ex.passage.iter().map(|t| normalize(&t.text)).collect(),
            clue_labels: Vec::new(),
            decoder_inputs: Vec::new(),
            targets: Vec::new(),
            copy_labels: Vec::new(),
            alignment: Vec::new(),
        }
    }

    pub fn prepare(&self, ex: &LabeledExample) -> Prepared {
        let mut p = self.prepare_passage(&ex.base);
        p.clue_labels = ex.passage_clue_label.clone();
        p.decoder_inputs = std::iter::once(Vocabulary::SOS_ID)
            .chain(ex.base.question.iter().map(|w| self.word_id(w)))
            .collect();
        p.targets = ex.question_target_id.clone();
        p.copy_labels = ex.question_copy_label.iter().copied().chain([false]).collect();
        p.alignment = ex.copy_alignment.iter().cloned().chain([Vec::new()]).collect();
        p
    }

    /// Clue prediction, encoder and initial decoder state.
    pub fn encode(&self, g: &mut Graph<'_>, ex: &Prepared, mode: &mut Mode<'_>) -> Result<Encoded> {
        let l = &self.layout;
        let base = l.emb.embed_base(g, &ex.features)?;
        let clue = match mode {
            Mode::Train(noise) => predict_clues(
                g,
                &self.clue,
                base,
                &ex.adjacency,
                ClueMode::Sample {
                    tau: self.config.tau,
                    rng: &mut *noise.gumbel,
                },
            )?,
            Mode::Eval => predict_clues::<StreamRng>(g, &self.clue, base, &ex.adjacency, ClueMode::Argmax)?,
        };
        let indicator = match mode {
            Mode::Train(_) if self.config.gold_clue_features && !ex.clue_labels.is_empty() => {
                g.constant(clue_one_hot(&ex.clue_labels))
            }
            _ => clue.one_hot,
        };
        let mut x = l.emb.append_clue(g, base, indicator)?;
        let rate = self.config.dropout;
        if let Mode::Train(noise) = mode {
            x = g.dropout(x, rate, true, &mut *noise.dropout)?;
        }
        let encoder = l.encoder.encode(g, x)?;
        let mut states = encoder.states;
        if let Mode::Train(noise) = mode {
            states = g.dropout(states, rate, true, &mut *noise.dropout)?;
        }
        let source = l.decoder.context(g, states)?;
        let s0 = l.decoder.init_state(g, encoder.last_backward())?;
        Ok(Encoded {
            clue,
            encoder,
            source,
            s0,
        })
    }

    /// One decoder step outside of teacher forcing.
    pub fn decode_step(
        &self,
        g: &mut Graph<'_>,
        prev_token_id: usize,
        c_prev: Var,
        s_prev: Var,
        source: &SourceContext,
    ) -> Result<StepOutput> {
        let w = self.layout.emb.embed_words(g, &[prev_token_id])?;
        let w = g.reshape(w, vec![self.config.word_dim])?;
        self.layout
            .decoder
            .step(g, w, c_prev, s_prev, source, &self.vocab_mask, &mut None)
    }

    /// Full forward pass with the three losses.
    pub fn forward(&self, g: &mut Graph<'_>, ex: &Prepared, mut mode: Mode<'_>) -> Result<Forward> {
        if !ex.has_question() {
            return Err(Error::Invalid(format!("example {} has no question to score", ex.id)));
        }
        let encoded = self.encode(g, ex, &mut mode)?;
        let inputs = self.layout.emb.embed_words(g, &ex.decoder_inputs)?;
        let steps = match &mut mode {
            Mode::Train(noise) => {
                let mut d = Dropout {
                    rate: self.config.dropout,
                    rng: &mut *noise.dropout,
                };
                self.layout
                    .decoder
                    .unroll(g, encoded.s0, &encoded.source, inputs, &self.vocab_mask, &mut Some(&mut d))?
            }
            Mode::Eval => self
                .layout
                .decoder
                .unroll(g, encoded.s0, &encoded.source, inputs, &self.vocab_mask, &mut None)?,
        };
        let losses = self.losses(g, ex, &encoded.clue, &steps)?;
        Ok(Forward {
            encoded,
            steps,
            losses,
        })
    }

    fn losses(&self, g: &mut Graph<'_>, ex: &Prepared, clue: &CluePrediction, steps: &[StepOutput]) -> Result<LossVars> {
        let n = ex.len();
        let logp = g.log_softmax(clue.logits)?;
        let picks: Vec<usize> = ex
            .clue_labels
            .iter()
            .enumerate()
            .map(|(i, &c)| 2 * i + c as usize)
            .collect();
        let ll = g.pick_sum(logp, &picks)?;
        let loss_clue = g.scale(ll, -1.0 / n as f64)?;

        let mut log_liks = Vec::with_capacity(steps.len());
        let mut gate_terms = Vec::with_capacity(steps.len());
        for (t, step) in steps.iter().enumerate() {
            let keep = g.one_minus(step.gate)?;
            let (branch, mass) = if ex.copy_labels[t] {
                (step.gate, g.pick_sum(step.alpha, &ex.alignment[t])?)
            } else {
                (keep, g.pick_sum(step.gen, &[ex.targets[t]])?)
            };
            let lik = g.mul(branch, mass)?;
            let lik = g.clamp_min(lik, PROB_FLOOR)?;
            log_liks.push(g.log(lik)?);
            let b = g.clamp_min(branch, PROB_FLOOR)?;
            gate_terms.push(g.log(b)?);
        }
        let t = steps.len() as f64;
        let all = g.concat(&log_liks, 0)?;
        let s = g.sum(all)?;
        let loss_gen = g.scale(s, -1.0 / t)?;
        let all = g.concat(&gate_terms, 0)?;
        let s = g.sum(all)?;
        let loss_gate = g.scale(s, -1.0 / t)?;

        let c = &self.config;
        let a = g.scale(loss_clue, c.lambda_clue)?;
        let b = g.scale(loss_gen, c.lambda_gen)?;
        let d = g.scale(loss_gate, c.lambda_gate)?;
        let ab = g.add(a, b)?;
        let total = g.add(ab, d)?;
        Ok(LossVars {
            clue: loss_clue,
            gen: loss_gen,
            gate: loss_gate,
            total,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_params(path, &self.params)
    }

    /// Writes a checkpoint of this model's vocabularies with `params`.
    pub fn save_params(&self, path: &Path, params: &ParamStore) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            reduced: self.reduced.clone(),
            tags: self.tags.clone(),
        })
        .map_err(|e| Error::Invalid(e.to_string()))?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            w.write_all(&(header.len() as u64).to_le_bytes())?;
            w.write_all(&header)?;
            params.write_to(w)?;
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.display().to_string(),
            reason,
        };
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4).map_err(|e| bad(e.to_string()))?;
        let version = u32::from_le_bytes(buf4);
        if version != VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8).map_err(|e| bad(e.to_string()))?;
        let mut header = vec![0u8; u64::from_le_bytes(buf8) as usize];
        r.read_exact(&mut header).map_err(|e| bad(e.to_string()))?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| bad(e.to_string()))?;
        let params = ParamStore::read_from(&mut r).map_err(|e| bad(e.to_string()))?;
        header.config.validate()?;

        let layout = Layout {
            emb: EmbeddingTables::lookup(&params)?,
            encoder: BiGru::lookup(&params, "enc")?,
            decoder: DecoderParams::lookup(&params)?,
        };
        let clue = ClueParams::lookup(&params, header.config.gcn_layers)?;
        let model = Self::assemble(header.config, header.vocab, header.reduced, header.tags, params, layout, clue)?;
        model.check_shapes().map_err(bad)?;
        Ok(model)
    }

    /// Compares stored shapes against those a fresh model would have.
    fn check_shapes(&self) -> std::result::Result<(), String> {
        let fresh = Model::init(
            self.config.clone(),
            self.vocab.clone(),
            self.reduced.clone(),
            self.tags.clone(),
            None,
        )
        .map_err(|e| e.to_string())?;
        fresh.params.check_same_layout(&self.params).map_err(|e| e.to_string())
    }
}

/// Per-example streams for training step `(epoch, index)`.
pub fn example_streams(tree: &RngTree, epoch: u64, index: u64) -> (StreamRng, StreamRng) {
    (
        tree.substream(Stream::Dropout, &[epoch, index]),
        tree.substream(Stream::Gumbel, &[epoch, index]),
    )
}

/// Value of a scalar loss node.
pub fn scalar(g: &Graph<'_>, v: Var) -> f64 {
    g.value(v).item()
}

//! Attention decoder with a maxout readout and a copy gate.
//!
//! Each step emits a distribution over the reduced target vocabulary
//! (`gen`), attention weights over the passage (`copy`) and the gate
//! `g_c`. A surface token `w` has probability
//! `(1 − g_c)·gen(w) + g_c·Σ_{i: passage_i = w} α_i`.

use std::collections::HashMap;

use rand::{Rng, RngCore};

use crate::corpus::ReducedTargetVocab;
use crate::encoder::GruParams;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Training-time dropout: a rate and the stream that draws the masks.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut dyn RngCore,
}

impl Dropout<'_> {
    pub fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        Ok(g.dropout(x, self.rate, true, &mut *self.rng)?)
    }
}

/// Applies dropout when `d` is set.
pub fn maybe_dropout(g: &mut Graph<'_>, x: Var, d: &mut Option<&mut Dropout<'_>>) -> Result<Var> {
    match d {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderParams {
    pub init_w: ParamId,
    pub init_b: ParamId,
    pub gru: GruParams,
    pub attn_ws: ParamId,
    pub attn_wh: ParamId,
    pub attn_v: ParamId,
    pub read_w: ParamId,
    pub read_c: ParamId,
    pub read_s: ParamId,
    pub out_w: ParamId,
    pub gate_s: ParamId,
    pub gate_c: ParamId,
    pub gate_b: ParamId,
}

/// Widths the decoder is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderDims {
    pub word: usize,
    pub enc_hidden: usize,
    pub hidden: usize,
    pub attn: usize,
    pub readout: usize,
    pub vocab: usize,
}

const NAMES: [&str; 12] = [
    "dec.init.w",
    "dec.init.b",
    "dec.attn.ws",
    "dec.attn.wh",
    "dec.attn.v",
    "dec.read.w",
    "dec.read.c",
    "dec.read.s",
    "dec.out.w",
    "dec.gate.s",
    "dec.gate.c",
    "dec.gate.b",
];

impl DecoderParams {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, d: DecoderDims, init: f64, rng: &mut R) -> Result<Self> {
        let ctx = 2 * d.enc_hidden;
        let gru = GruParams::register(store, "dec.gru", d.word + ctx, d.hidden, init, rng)?;
        let shapes: [(&[usize], bool); 12] = [
            (&[d.enc_hidden, d.hidden], true),
            (&[d.hidden], false),
            (&[d.hidden, d.attn], true),
            (&[ctx, d.attn], true),
            (&[d.attn], true),
            (&[d.word, 2 * d.readout], true),
            (&[ctx, 2 * d.readout], true),
            (&[d.hidden, 2 * d.readout], true),
            (&[d.readout, d.vocab], true),
            (&[d.hidden], true),
            (&[ctx], true),
            (&[1], false),
        ];
        let mut ids = Vec::with_capacity(NAMES.len());
        for (name, (shape, weight)) in NAMES.iter().zip(shapes) {
            let value = if weight {
                Tensor::uniform(shape, init, rng)
            } else {
                Tensor::zeros(shape)
            };
            ids.push(store.add(name, value)?);
        }
        Ok(Self::from_ids(gru, &ids))
    }

    pub fn lookup(store: &ParamStore) -> Result<Self> {
        let gru = GruParams::lookup(store, "dec.gru")?;
        let ids = NAMES
            .iter()
            .map(|n| store.id(n).ok_or_else(|| Error::Invalid(format!("missing parameter `{n}`"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_ids(gru, &ids))
    }

    fn from_ids(gru: GruParams, ids: &[ParamId]) -> Self {
        DecoderParams {
            init_w: ids[0],
            init_b: ids[1],
            gru,
            attn_ws: ids[2],
            attn_wh: ids[3],
            attn_v: ids[4],
            read_w: ids[5],
            read_c: ids[6],
            read_s: ids[7],
            out_w: ids[8],
            gate_s: ids[9],
            gate_c: ids[10],
            gate_b: ids[11],
        }
    }

    /// `s_0 = tanh(W_0 ←h_1 + b)`.
    pub fn init_state(&self, g: &mut Graph<'_>, last_backward: Var) -> Result<Var> {
        let (w, b) = (g.param(self.init_w), g.param(self.init_b));
        let p = g.matmul(last_backward, w)?;
        let p = g.add(p, b)?;
        Ok(g.tanh(p)?)
    }

    /// Encoder states plus their attention keys, computed once per passage.
    pub fn context(&self, g: &mut Graph<'_>, states: Var) -> Result<SourceContext> {
        let wh = g.param(self.attn_wh);
        let keys = g.matmul(states, wh)?;
        Ok(SourceContext { states, keys })
    }

    /// `e_i = vᵀ tanh(W_s s + W_h h_i)`, `α = softmax(e)`, `c = Σ α_i h_i`.
    pub fn attention(&self, g: &mut Graph<'_>, s: Var, src: &SourceContext) -> Result<Attention> {
        let ws = g.param(self.attn_ws);
        let query = g.matmul(s, ws)?;
        let pre = g.add_rows(src.keys, query)?;
        let act = g.tanh(pre)?;
        let v = g.param(self.attn_v);
        let scores = g.matmul(act, v)?;
        let weights = g.softmax(scores, None)?;
        let context = g.matmul(weights, src.states)?;
        Ok(Attention {
            scores,
            weights,
            context,
        })
    }

    /// One decoder step. `vocab_mask` disables entries of the output
    /// softmax (the `<SOS>` row).
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        g: &mut Graph<'_>,
        w_prev: Var,
        c_prev: Var,
        s_prev: Var,
        src: &SourceContext,
        vocab_mask: &[bool],
        dropout: &mut Option<&mut Dropout<'_>>,
    ) -> Result<StepOutput> {
        let x = g.concat(&[w_prev, c_prev], 0)?;
        let s = crate::encoder::gru_cell(g, x, s_prev, &self.gru)?;
        let att = self.attention(g, s, src)?;
        let c = att.context;

        let (rw, rc, rs) = (g.param(self.read_w), g.param(self.read_c), g.param(self.read_s));
        let a = g.matmul(w_prev, rw)?;
        let b = g.matmul(c, rc)?;
        let d = g.matmul(s, rs)?;
        let ab = g.add(a, b)?;
        let readout = g.add(ab, d)?;
        let m = g.maxout(readout)?;
        let m = maybe_dropout(g, m, dropout)?;
        let wo = g.param(self.out_w);
        let logits = g.matmul(m, wo)?;
        let gen = g.softmax(logits, Some(vocab_mask))?;

        let (gs, gc, gb) = (g.param(self.gate_s), g.param(self.gate_c), g.param(self.gate_b));
        let x1 = g.matmul(s, gs)?;
        let x2 = g.matmul(c, gc)?;
        let x12 = g.add(x1, x2)?;
        let pre = g.add(x12, gb)?;
        let gate = g.sigmoid(pre)?;
        Ok(StepOutput {
            s,
            c,
            alpha: att.weights,
            readout,
            maxout: m,
            gen,
            gate,
        })
    }

    /// Teacher-forced unroll. `inputs` are the word-table embeddings of
    /// `<SOS>` followed by the gold question tokens, one row per step.
    pub fn unroll(
        &self,
        g: &mut Graph<'_>,
        s0: Var,
        src: &SourceContext,
        inputs: Var,
        vocab_mask: &[bool],
        dropout: &mut Option<&mut Dropout<'_>>,
    ) -> Result<Vec<StepOutput>> {
        let steps = g.shape(inputs)[0];
        let ctx_width = g.shape(src.states)[1];
        let mut c = g.constant(Tensor::zeros(&[ctx_width]));
        let mut s = s0;
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let w = g.row(inputs, t)?;
            let o = self.step(g, w, c, s, src, vocab_mask, dropout)?;
            s = o.s;
            c = o.c;
            out.push(o);
        }
        Ok(out)
    }
}

/// Mask for the output softmax: everything but `<SOS>`.
pub fn generation_mask(vocab_size: usize) -> Vec<bool> {
    (0..vocab_size).map(|i| i != ReducedTargetVocab::SOS_ID).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SourceContext {
    pub states: Var,
    pub keys: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub scores: Var,
    pub weights: Var,
    pub context: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub s: Var,
    pub c: Var,
    pub alpha: Var,
    pub readout: Var,
    pub maxout: Var,
    pub gen: Var,
    /// `[1]`, the copy probability `g_c`.
    pub gate: Var,
}

impl StepOutput {
    pub fn distribution(&self, g: &Graph<'_>) -> ExtendedDistribution {
        ExtendedDistribution {
            gen: g.value(self.gen).data().to_vec(),
            copy: g.value(self.alpha).data().to_vec(),
            gate: g.value(self.gate).item(),
        }
    }
}

/// Per-step output over the reduced vocabulary and source positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedDistribution {
    pub gen: Vec<f64>,
    pub copy: Vec<f64>,
    pub gate: f64,
}

impl ExtendedDistribution {
    /// `(1 − g_c)·Σ gen + g_c·Σ copy`, which is 1 up to rounding.
    pub fn total(&self) -> f64 {
        (1.0 - self.gate) * self.gen.iter().sum::<f64>() + self.gate * self.copy.iter().sum::<f64>()
    }

    /// Probability per surface form, with generation and copy mass of equal
    /// forms summed. Vocabulary entries come first in id order, then new
    /// passage forms in position order; zero-probability forms are dropped.
    pub fn surface(&self, reduced: &ReducedTargetVocab, passage: &[String]) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::with_capacity(self.gen.len() + passage.len());
        let mut slot: HashMap<&str, usize> = HashMap::new();
        for (id, &p) in self.gen.iter().enumerate() {
            let w = reduced.surface(id);
            slot.insert(w, out.len());
            out.push((w.to_string(), (1.0 - self.gate) * p));
        }
        for (word, &a) in passage.iter().zip(&self.copy) {
            let mass = self.gate * a;
            match slot.get(word.as_str()) {
                Some(&i) => out[i].1 += mass,
                None => {
                    slot.insert(word, out.len());
                    out.push((word.clone(), mass));
                }
            }
        }
        out.retain(|(_, p)| *p > 0.0);
        out
    }
}

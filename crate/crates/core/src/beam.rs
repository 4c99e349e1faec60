//! Beam-search question generation.

use serde::{Deserialize, Serialize};

use crate::corpus::EOS;
use crate::error::{Error, Result};
use crate::model::{Mode, Model, Prepared};
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Emitted surface tokens, ending with `<EOS>` when finished.
    pub tokens: Vec<String>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Length-normalized score `log_prob / len`.
    pub fn score(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }

    /// The question without the end marker.
    pub fn words(&self) -> &[String] {
        match self.tokens.last() {
            Some(t) if t == EOS => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    pub fn text(&self) -> String {
        self.words().join(" ")
    }
}

struct Live {
    hyp: Hypothesis,
    s: Tensor,
    c: Tensor,
}

/// Decodes with eval-mode clue prediction. Per step every live hypothesis is
/// expanded over the merged surface distribution and the best candidates by
/// log-probability are kept; the beam shrinks as hypotheses finish. Results
/// are sorted by length-normalized score; unfinished hypotheses are only
/// returned when `max_len` was reached.
pub fn generate(model: &Model, ex: &Prepared, beam_width: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
    if beam_width == 0 || max_len == 0 {
        return Err(Error::Invalid("beam width and max length must be positive".into()));
    }
    let (states, keys, s0) = {
        let mut g = Graph::new(&model.params);
        let enc = model.encode(&mut g, ex, &mut Mode::Eval)?;
        (
            g.value(enc.source.states).clone(),
            g.value(enc.source.keys).clone(),
            g.value(enc.s0).clone(),
        )
    };
    let ctx_width = states.cols();
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        s: s0,
        c: Tensor::zeros(&[ctx_width]),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut reached_max = false;
    for t in 0..max_len {
        let capacity = beam_width.saturating_sub(finished.len());
        if capacity == 0 || live.is_empty() {
            break;
        }
        let mut g = Graph::new(&model.params);
        let src = crate::decoder::SourceContext {
            states: g.constant(states.clone()),
            keys: g.constant(keys.clone()),
        };
        let mut candidates: Vec<(usize, String, f64, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (h, l) in live.iter().enumerate() {
            let prev = l.hyp.tokens.last().map_or(crate::corpus::SOS, String::as_str);
            let prev_id = model.decoder_input_id(prev);
            let s_prev = g.constant(l.s.clone());
            let c_prev = g.constant(l.c.clone());
            let step = model.decode_step(&mut g, prev_id, c_prev, s_prev, &src)?;
            next_states.push((g.value(step.s).clone(), g.value(step.c).clone()));
            let mut dist = step.distribution(&g).surface(&model.reduced, &ex.passage);
            // Stable sort keeps the documented surface order among ties.
            dist.sort_by(|a, b| b.1.total_cmp(&a.1));
            for (rank, (word, p)) in dist.into_iter().take(capacity).enumerate() {
                candidates.push((h, word, l.hyp.log_prob + p.ln(), rank));
            }
        }
        candidates.sort_by(|a, b| b.2.total_cmp(&a.2));
        candidates.truncate(capacity);
        let mut next = Vec::with_capacity(candidates.len());
        for (h, word, log_prob, _) in candidates {
            let mut tokens = live[h].hyp.tokens.clone();
            let done = word == EOS;
            tokens.push(word);
            let hyp = Hypothesis {
                tokens,
                log_prob,
                finished: done,
            };
            if done {
                finished.push(hyp);
            } else {
                let (s, c) = next_states[h].clone();
                next.push(Live { hyp, s, c });
            }
        }
        live = next;
        reached_max = t + 1 == max_len;
    }
    let mut out = finished;
    if reached_max {
        out.extend(live.into_iter().map(|l| l.hyp));
    }
    out.sort_by(|a, b| b.score().total_cmp(&a.score()));
    Ok(out)
}

/// Best hypothesis, or an empty one when nothing was produced.
pub fn best(model: &Model, ex: &Prepared, beam_width: usize, max_len: usize) -> Result<Hypothesis> {
    Ok(generate(model, ex, beam_width, max_len)?
        .into_iter()
        .next()
        .unwrap_or(Hypothesis {
            tokens: Vec::new(),
            log_prob: f64::NEG_INFINITY,
            finished: false,
        }))
}

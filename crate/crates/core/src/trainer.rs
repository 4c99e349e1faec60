//! Joint training: weighted clue, generation and copy-gate losses, Adam with
//! elementwise gradient clipping, and an exponential moving average of the
//! weights.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{example_streams, scalar, Forward, Mode, Model, Prepared, TrainNoise};
use crate::rng::{RngTree, Stream};
use crate::tensor::{Gradients, Graph, ParamStore};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss_clue: f64,
    pub loss_gen: f64,
    pub loss_gate: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_forward(g: &Graph<'_>, f: &Forward) -> Self {
        LossBreakdown {
            loss_clue: scalar(g, f.losses.clue),
            loss_gen: scalar(g, f.losses.gen),
            loss_gate: scalar(g, f.losses.gate),
            total: scalar(g, f.losses.total),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.loss_clue, self.loss_gen, self.loss_gate, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Mean of a sequence of breakdowns (zero when empty).
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a LossBreakdown>) -> Self {
        let mut acc = LossBreakdown::default();
        let mut n = 0usize;
        for b in items {
            acc.loss_clue += b.loss_clue;
            acc.loss_gen += b.loss_gen;
            acc.loss_gate += b.loss_gate;
            acc.total += b.total;
            n += 1;
        }
        if n > 0 {
            let k = 1.0 / n as f64;
            acc.loss_clue *= k;
            acc.loss_gen *= k;
            acc.loss_gate *= k;
            acc.total *= k;
        }
        acc
    }
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "clue={:.6} gen={:.6} gate={:.6} total={:.6}",
            self.loss_clue, self.loss_gen, self.loss_gate, self.total
        )
    }
}

/// Losses and parameter gradients of one example.
pub fn compute_losses(model: &Model, ex: &Prepared, mode: Mode<'_>) -> Result<(LossBreakdown, Gradients)> {
    let mut g = Graph::new(&model.params);
    let f = model.forward(&mut g, ex, mode)?;
    let losses = LossBreakdown::from_forward(&g, &f);
    if !losses.is_finite() {
        return Ok((losses, Gradients::default()));
    }
    let grads = g.backward(f.losses.total)?;
    Ok((losses, grads))
}

/// Eval-mode losses without gradients.
pub fn evaluate_losses(model: &Model, ex: &Prepared) -> Result<LossBreakdown> {
    let mut g = Graph::new(&model.params);
    let f = model.forward(&mut g, ex, Mode::Eval)?;
    Ok(LossBreakdown::from_forward(&g, &f))
}

/// Mean eval-mode losses over a data set, computed in parallel.
pub fn dataset_losses(model: &Model, data: &[Prepared]) -> Result<LossBreakdown> {
    let all = data
        .par_iter()
        .map(|ex| evaluate_losses(model, ex))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&all))
}

/// Adam with every gradient entry clipped to `[−clip, clip]` first.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64, clip: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            clip,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn from_config(store: &ParamStore, c: &ModelConfig) -> Self {
        Self::new(store, c.lr, c.beta1, c.beta2, c.eps, c.clip)
    }

    /// Applies one update from the gradient buffers of `store`.
    pub fn update(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((value, grad), (m, v)) in store
            .values_and_grads_mut()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (i, p) in value.data_mut().iter_mut().enumerate() {
                let g = grad[i].clamp(-self.clip, self.clip);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Shadow weights updated as `shadow ← d·shadow + (1 − d)·param`.
#[derive(Debug, Clone)]
pub struct Ema {
    pub decay: f64,
    pub shadow: ParamStore,
}

impl Ema {
    pub fn new(store: &ParamStore, decay: f64) -> Self {
        Ema {
            decay,
            shadow: store.clone(),
        }
    }

    pub fn update(&mut self, store: &ParamStore) {
        let d = self.decay;
        for ((_, src), id) in store.iter().zip(self.shadow.ids().collect::<Vec<_>>()) {
            for (s, p) in self.shadow.value_mut(id).data_mut().iter_mut().zip(src.data()) {
                *s = d * *s + (1.0 - d) * p;
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_clue: f64,
    pub loss_gen: f64,
    pub loss_gate: f64,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<LossBreakdown>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for checkpoints and the epoch log.
    pub out_dir: Option<PathBuf>,
    /// Stop once an epoch's mean training loss falls below this.
    pub stop_below: Option<f64>,
    /// Overrides `config.epochs`.
    pub max_epochs: Option<usize>,
}

pub const RAW_CHECKPOINT: &str = "raw.ckpt";
pub const EMA_CHECKPOINT: &str = "ema.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";

/// Optimizer, EMA and stream state around a model being trained.
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub ema: Ema,
    pub epoch: usize,
    tree: RngTree,
}

impl Trainer {
    pub fn new(model: Model) -> Self {
        let adam = Adam::from_config(&model.params, &model.config);
        let ema = Ema::new(&model.params, model.config.ema_decay);
        let tree = RngTree::new(model.config.seed);
        Trainer {
            model,
            adam,
            ema,
            epoch: 0,
            tree,
        }
    }

    /// One pass over `data` in a seeded shuffled order. Returns the mean
    /// training-mode losses seen before each update.
    pub fn train_epoch(&mut self, data: &[Prepared]) -> Result<LossBreakdown> {
        if data.is_empty() {
            return Err(Error::Invalid("training set is empty".into()));
        }
        let epoch = self.epoch as u64;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.tree.substream(Stream::Shuffle, &[epoch]));
        let mut seen = Vec::with_capacity(data.len());
        for (b, batch) in order.chunks(self.model.config.batch_size).enumerate() {
            let model = &self.model;
            let tree = &self.tree;
            let results = batch
                .par_iter()
                .map(|&i| {
                    let (mut dropout, mut gumbel) = example_streams(tree, epoch, i as u64);
                    let mode = Mode::Train(TrainNoise {
                        dropout: &mut dropout,
                        gumbel: &mut gumbel,
                    });
                    compute_losses(model, &data[i], mode)
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(pos) = results.iter().position(|(l, _)| !l.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    batch: b,
                    example: data[batch[pos]].id.clone(),
                    detail: results[pos].0.to_string(),
                });
            }
            let store = &mut self.model.params;
            store.zero_grads();
            for (_, grads) in &results {
                store.accumulate(grads);
            }
            store.scale_grads(1.0 / batch.len() as f64);
            if !store.grads_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    batch: b,
                    example: data[batch[0]].id.clone(),
                    detail: "non-finite gradient".into(),
                });
            }
            self.adam.update(store);
            self.ema.update(store);
            seen.extend(results.into_iter().map(|(l, _)| l));
        }
        self.epoch += 1;
        Ok(LossBreakdown::mean(&seen))
    }

    pub fn ema_model(&self) -> Result<Model> {
        self.model.with_params(self.ema.shadow.clone())
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub log: Vec<EpochLog>,
    /// Epoch (1-based) with the lowest dev loss, when a dev set was given.
    pub best_epoch: Option<usize>,
}

fn write_line(path: &Path, line: &EpochLog) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let text = serde_json::to_string(line).map_err(|e| Error::Invalid(e.to_string()))?;
    writeln!(f, "{text}").map_err(|e| Error::io(path, e))
}

/// Full training run. Writes `raw.ckpt`, `ema.ckpt`, `train_log.jsonl` and,
/// with a dev set, `best.ckpt` (raw weights of the lowest dev loss) to
/// `opts.out_dir` when given.
pub fn train(model: Model, train_set: &[Prepared], dev_set: &[Prepared], opts: &TrainOptions) -> Result<TrainOutcome> {
    let epochs = opts.max_epochs.unwrap_or(model.config.epochs);
    let mut trainer = Trainer::new(model);
    let log_path = opts.out_dir.as_ref().map(|d| d.join(TRAIN_LOG));
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        File::create(dir.join(TRAIN_LOG)).map_err(|e| Error::io(dir.join(TRAIN_LOG), e))?;
    }
    let mut log = Vec::with_capacity(epochs);
    let mut best: Option<(usize, f64)> = None;
    for _ in 0..epochs {
        let losses = trainer.train_epoch(train_set)?;
        let epoch = trainer.epoch;
        let dev = if dev_set.is_empty() {
            None
        } else {
            Some(dataset_losses(&trainer.model, dev_set)?)
        };
        let line = EpochLog {
            epoch,
            loss_clue: losses.loss_clue,
            loss_gen: losses.loss_gen,
            loss_gate: losses.loss_gate,
            total: losses.total,
            dev,
        };
        log::info!(
            "epoch {epoch}: {losses}{}",
            dev.map(|d| format!(" | dev {d}")).unwrap_or_default()
        );
        if let Some(path) = &log_path {
            write_line(path, &line)?;
        }
        if let Some(d) = dev {
            if best.is_none_or(|(_, b)| d.total < b) {
                best = Some((epoch, d.total));
                if let Some(dir) = &opts.out_dir {
                    trainer.model.save(&dir.join(BEST_CHECKPOINT))?;
                }
            }
        }
        log.push(line);
        if opts.stop_below.is_some_and(|t| losses.total < t) {
            break;
        }
    }
    if let Some(dir) = &opts.out_dir {
        trainer.model.save(&dir.join(RAW_CHECKPOINT))?;
        trainer.model.save_params(&dir.join(EMA_CHECKPOINT), &trainer.ema.shadow)?;
    }
    Ok(TrainOutcome {
        trainer,
        log,
        best_epoch: best.map(|(e, _)| e),
    })
}

//! Model and training hyperparameters.
//!
//! The configuration file is flat JSON; every key is optional and falls back
//! to the default below. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("config file: {0}")]
    Parse(String),
}

fn field(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Words ranked at or above this are tier H.
    pub r_h: usize,
    /// Words ranked above `r_h` and at or above this are tier M.
    pub r_l: usize,
    /// Size of the reduced decoder vocabulary, before special tokens.
    pub n_target: usize,
    pub vocab_max: usize,
    pub word_dim: usize,
    pub tier_dim: usize,
    pub feat_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub attn_hidden: usize,
    /// Maxout output width; the readout before pooling is twice this.
    pub readout_dim: usize,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub tau: f64,
    pub dropout: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip: f64,
    pub ema_decay: f64,
    pub beam_width: usize,
    pub max_len: usize,
    pub lambda_clue: f64,
    pub lambda_gen: f64,
    pub lambda_gate: f64,
    pub mask_low_freq: bool,
    /// Feed gold clue labels to the encoder during training instead of the
    /// predictor's straight-through sample.
    pub gold_clue_features: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            r_h: 100,
            r_l: 2000,
            n_target: 2000,
            vocab_max: 20000,
            word_dim: 300,
            tier_dim: 32,
            feat_dim: 16,
            enc_hidden: 512,
            dec_hidden: 512,
            attn_hidden: 512,
            readout_dim: 512,
            gcn_layers: 3,
            gcn_hidden: 256,
            tau: 1.0,
            dropout: 0.1,
            lr: 0.001,
            beta1: 0.8,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 10,
            clip: 5.0,
            ema_decay: 0.9999,
            beam_width: 20,
            max_len: 30,
            lambda_clue: 1.0,
            lambda_gen: 1.0,
            lambda_gate: 1.0,
            mask_low_freq: true,
            gold_clue_features: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("r_h", self.r_h),
            ("r_l", self.r_l),
            ("n_target", self.n_target),
            ("vocab_max", self.vocab_max),
            ("word_dim", self.word_dim),
            ("tier_dim", self.tier_dim),
            ("feat_dim", self.feat_dim),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("attn_hidden", self.attn_hidden),
            ("readout_dim", self.readout_dim),
            ("gcn_hidden", self.gcn_hidden),
            ("batch_size", self.batch_size),
            ("beam_width", self.beam_width),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(field(name, "must be positive"));
            }
        }
        if self.r_h >= self.r_l {
            return Err(field("r_h", format!("must be below r_l ({} >= {})", self.r_h, self.r_l)));
        }
        if !(1..=5).contains(&self.gcn_layers) {
            return Err(field("gcn_layers", format!("must be in 1..=5, got {}", self.gcn_layers)));
        }
        let positive_reals = [
            ("tau", self.tau),
            ("lr", self.lr),
            ("eps", self.eps),
            ("clip", self.clip),
        ];
        for (name, v) in positive_reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(field(name, format!("must be a positive number, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(field("dropout", format!("must be in [0, 1), got {}", self.dropout)));
        }
        for (name, v) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("ema_decay", self.ema_decay),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(field(name, format!("must be in [0, 1), got {v}")));
            }
        }
        for (name, v) in [
            ("lambda_clue", self.lambda_clue),
            ("lambda_gen", self.lambda_gen),
            ("lambda_gate", self.lambda_gate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(field(name, format!("must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ModelConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Width of the per-token features shared by the clue predictor and the
    /// encoder: word, seven 16-d tag/indicator slots, and the frequency tier.
    pub fn base_feature_width(&self) -> usize {
        self.word_dim + 7 * self.feat_dim + self.tier_dim
    }

    /// Encoder input width: the base features plus the clue indicator slot.
    pub fn encoder_input_width(&self) -> usize {
        self.base_feature_width() + self.feat_dim
    }
}

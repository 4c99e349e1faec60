//! Clue-guided copy network for answer-aware question generation.
//!
//! The pipeline: pre-parsed passages are labeled for multi-task supervision
//! ([`labeling`]), embedded with lexical and frequency features
//! ([`features`]), scored for clue words by a graph convolution over the
//! dependency tree ([`clue`]), encoded by a bidirectional GRU ([`encoder`])
//! and decoded by an attention/copy GRU ([`decoder`]). Everything runs on the
//! small autodiff engine in [`tensor`].

pub mod beam;
pub mod clue;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoder;
mod error;
pub mod features;
pub mod labeling;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod toy;
pub mod trainer;

pub use config::{ConfigError, ModelConfig};
pub use error::{Error, Result};
pub use model::Model;

//! Duration-explicit acoustic model: visual feature extractor, attention
//! encoder, duration predictor with length regulation, additive sound
//! event conditioning and an attention decoder producing log-mel frames.
//!
//! The forward pass is written against [`Tape`] so the same code serves
//! training (`f32`), inference and finite-difference checks (`f64`).

mod checkpoint;
mod event;
mod layers;

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::tensor::{Float, Tensor};

pub use checkpoint::{Checkpoint, CheckpointHeader, StretchMode, CHECKPOINT_MAGIC};
pub use event::{
    read_embedding_file, write_embedding_file, EventFeature, EventInput, EventSource, ToyImageEmbedder, EVENT_DIM,
};
pub use layers::{
    attention, decode, durations_from_log, encode, event_vector, extract_visual_features, forward, infer,
    length_regulate, positional_encoding, predict_durations, ForwardInput, ForwardOutput, Inference, LN_EPS,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{n} tokens exceed the maximum of {max}")]
    TooManyTokens { n: usize, max: usize },
    #[error("{n} frames exceed the maximum of {max}")]
    TooManyFrames { n: usize, max: usize },
    #[error("all durations are zero")]
    EmptyOutput,
    #[error("unknown event label `{0}`")]
    UnknownLabel(String),
    #[error("bad embedding file: {0}")]
    BadEmbeddingFile(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Image(#[from] crate::pgm::PgmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub cell_h: usize,
    pub cell_w: usize,
    pub conv_channels: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub ffn_hidden: usize,
    pub ffn_kernel: usize,
    pub dur_hidden: usize,
    pub dur_kernel: usize,
    pub event_dim: usize,
    pub n_mels: usize,
    /// Rows of the label embedding table.
    pub n_labels: usize,
    pub max_tokens: usize,
    pub max_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            cell_h: 24,
            cell_w: 24,
            conv_channels: 8,
            d_model: 128,
            n_heads: 2,
            n_enc_layers: 2,
            n_dec_layers: 2,
            ffn_hidden: 256,
            ffn_kernel: 3,
            dur_hidden: 128,
            dur_kernel: 3,
            event_dim: EVENT_DIM,
            n_mels: 80,
            n_labels: 0,
            max_tokens: 256,
            max_frames: 2048,
        }
    }
}

impl ModelConfig {
    /// Small enough to train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            cell_h: 16,
            cell_w: 16,
            conv_channels: 4,
            d_model: 32,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            ffn_hidden: 64,
            dur_hidden: 32,
            n_mels: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        let dims = [
            self.cell_h,
            self.cell_w,
            self.conv_channels,
            self.d_model,
            self.n_heads,
            self.ffn_hidden,
            self.dur_hidden,
            self.n_mels,
            self.max_tokens,
            self.max_frames,
        ];
        if dims.contains(&0) {
            return bad("all dimensions must be at least 1".into());
        }
        if self.cell_h % 4 != 0 || self.cell_w % 4 != 0 {
            return bad(format!("cell {}x{} must be divisible by 4", self.cell_h, self.cell_w));
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.n_heads));
        }
        if self.ffn_kernel % 2 == 0 || self.dur_kernel % 2 == 0 {
            return bad("convolution kernels must be odd".into());
        }
        if self.event_dim != EVENT_DIM {
            return bad(format!("event_dim must be {EVENT_DIM}"));
        }
        Ok(())
    }

    fn visual_flat(&self) -> usize {
        (self.cell_h / 4) * (self.cell_w / 4) * self.conv_channels
    }
}

/// Named parameter tensors in a fixed order. The flat view concatenates
/// them in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    names: Arc<Vec<String>>,
    index: Arc<HashMap<String, usize>>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Float> ModelParams<S> {
    pub fn from_named(named: Vec<(String, Tensor<S>)>) -> Self {
        let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self {
            names: Arc::new(names),
            index: Arc::new(index),
            tensors: named.into_iter().map(|(_, t)| t).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.position(name).map(|i| &mut self.tensors[i])
    }

    pub fn flat_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (t, tensor) in self.tensors.iter().enumerate() {
            if i < tensor.len() {
                return (t, i);
            }
            i -= tensor.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn flat_get(&self, i: usize) -> S {
        let (t, j) = self.locate(i);
        self.tensors[t].data()[j]
    }

    pub fn flat_set(&mut self, i: usize, v: S) {
        let (t, j) = self.locate(i);
        self.tensors[t].data_mut()[j] = v;
    }

    /// Name of the tensor holding flat index `i`.
    pub fn flat_name(&self, i: usize) -> &str {
        &self.names[self.locate(i).0]
    }

    pub fn cast<T: Float>(&self) -> ModelParams<T> {
        ModelParams {
            names: self.names.clone(),
            index: self.index.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Puts every tensor on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> Bound {
        self.bind_with(tape, true)
    }

    /// Puts every tensor on the tape as a constant (inference).
    pub fn bind_constants(&self, tape: &mut Tape<S>) -> Bound {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape<S>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }
}

/// Tape handles of a bound parameter set.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    index: Arc<HashMap<String, usize>>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("no parameter named `{name}`"),
        }
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

struct Init {
    rng: ChaCha8Rng,
    named: Vec<(String, Tensor<f32>)>,
}

impl Init {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("valid range");
        let w = Tensor::from_fn(fan_in, fan_out, |_, _| dist.sample(&mut self.rng) as f32);
        self.named.push((format!("{name}.w"), w));
        self.named.push((format!("{name}.b"), Tensor::zeros(1, fan_out)));
    }

    fn norm(&mut self, name: &str, dim: usize) {
        self.named.push((format!("{name}.g"), Tensor::filled(1, dim, 1.0)));
        self.named.push((format!("{name}.b"), Tensor::zeros(1, dim)));
    }

    fn block(&mut self, prefix: &str, c: &ModelConfig) {
        let d = c.d_model;
        for p in ["wq", "wk", "wv", "wo"] {
            self.linear(&format!("{prefix}.{p}"), d, d);
        }
        self.norm(&format!("{prefix}.ln1"), d);
        self.linear(&format!("{prefix}.ffn1"), c.ffn_kernel * d, c.ffn_hidden);
        self.linear(&format!("{prefix}.ffn2"), c.ffn_hidden, d);
        self.norm(&format!("{prefix}.ln2"), d);
    }
}

impl ModelParams<f32> {
    /// Seeded Glorot-uniform weights, zero biases, unit norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            named: Vec::new(),
        };
        init.linear("vis.conv", 9, c.conv_channels);
        init.linear("vis.proj", c.visual_flat(), c.d_model);
        for l in 0..c.n_enc_layers {
            init.block(&format!("enc.{l}"), c);
        }
        init.linear("dur.conv1", c.dur_kernel * c.d_model, c.dur_hidden);
        init.norm("dur.ln1", c.dur_hidden);
        init.linear("dur.conv2", c.dur_kernel * c.dur_hidden, c.dur_hidden);
        init.norm("dur.ln2", c.dur_hidden);
        init.linear("dur.out", c.dur_hidden, 1);
        if c.n_labels > 0 {
            let normal = Normal::new(0.0, 0.3).expect("valid std");
            let table = Tensor::from_fn(c.n_labels, c.event_dim, |_, _| normal.sample(&mut init.rng) as f32);
            init.named.push(("event.table".into(), table));
        }
        init.linear("event.proj", c.event_dim, c.d_model);
        for l in 0..c.n_dec_layers {
            init.block(&format!("dec.{l}"), c);
        }
        init.linear("mel", c.d_model, c.n_mels);
        Ok(Self::from_named(init.named))
    }
}

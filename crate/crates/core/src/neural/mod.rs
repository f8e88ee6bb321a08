//! Character-level attentional encoder-decoder.
//!
//! A bidirectional GRU encoder reads the source characters; a stacked GRU
//! decoder conditioned on an additive-attention context emits target
//! characters. The same code serves the forward (MR → utterance) and reverse
//! (utterance → MR) models. Backpropagation is hand-written and verified by
//! [`gradient_check`].

mod decode;
mod gradcheck;
mod linalg;
mod model;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decode::{
    beam_search, greedy_decode, length_penalty, score_sequence, Hypothesis, NBestList,
};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use linalg::Matrix;
pub use model::{
    attend, decode_step, encode, initial_state, sequence_gradient, Attention, DecoderState,
    EncodedSource, SequenceStats,
};
pub use params::{AttentionParams, Dense, GruParams, ModelParams};
pub use train::{evaluate, train, train_with, EpochStats, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuralError {
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("empty source sequence")]
    EmptySource,
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("non-finite loss at epoch {epoch}, example {example}: {loss}")]
    NonFiniteLoss {
        epoch: usize,
        example: usize,
        loss: f64,
    },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("parameter tensor `{0}`: {1}")]
    BadTensor(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[default]
    Gru,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    #[default]
    Additive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    #[serde(default)]
    pub cell: CellKind,
    #[serde(default)]
    pub attention: AttentionKind,
    pub max_decode_len: usize,
}

impl ModelConfig {
    /// One encoder layer, two decoder layers, GRU cells, additive attention.
    pub fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        Self {
            vocab_size,
            embed_dim,
            hidden_dim,
            attention_dim: hidden_dim,
            encoder_layers: 1,
            decoder_layers: 2,
            cell: CellKind::Gru,
            attention: AttentionKind::Additive,
            max_decode_len: 350,
        }
    }

    /// embed 4, hidden 5: the gradient-check configuration.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            attention_dim: 5,
            max_decode_len: 20,
            ..Self::new(vocab_size, 4, 5)
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("attention_dim", self.attention_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(NeuralError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Width of one encoder position (forward and backward states concatenated).
    pub fn encoder_width(&self) -> usize {
        2 * self.hidden_dim
    }
}

//! The compact encoder-decoder transformer: configuration, training,
//! greedy decoding, and checkpointing. Generic over the scalar type —
//! training runs at `f32`, gradient verification at `f64`.

mod checkpoint;
mod decode;
mod layers;
mod optim;
mod seq2seq;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use decode::{greedy_decode, DecodeOutcome};
pub use layers::{Param, Scalar};
pub use optim::{AdamW, Schedule};
pub use seq2seq::{cross_entropy, ForwardState, Seq2Seq};
pub use train::{fine_tune, train, train_observed, IdPair, LossHistory, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    ConfigInvalid(String),
    #[error("sequence {index} has length {len}, exceeding the context window {max}")]
    SequenceTooLong {
        index: usize,
        len: usize,
        max: usize,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub embedding_size: usize,
    pub feedforward_size: usize,
    pub attention_heads: usize,
    pub dropout: f64,
    pub context_window: usize,
}

impl Default for ModelConfig {
    /// The documented default ("toy") configuration.
    fn default() -> Self {
        ModelConfig {
            encoder_layers: 1,
            decoder_layers: 1,
            embedding_size: 64,
            feedforward_size: 256,
            attention_heads: 4,
            dropout: 0.0,
            context_window: 5000,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.encoder_layers < 1
            || self.decoder_layers < 1
            || self.embedding_size < 1
            || self.feedforward_size < 1
            || self.attention_heads < 1
            || self.context_window < 1
        {
            return Err(ModelError::ConfigInvalid(
                "all size fields must be >= 1".to_string(),
            ));
        }
        if self.embedding_size % self.attention_heads != 0 {
            return Err(ModelError::ConfigInvalid(format!(
                "embedding_size {} not divisible by attention_heads {}",
                self.embedding_size, self.attention_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::ConfigInvalid(format!(
                "dropout {} outside [0,1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count for this architecture with the given
    /// vocabulary sizes.
    pub fn param_count(&self, src_vocab: usize, tgt_vocab: usize) -> usize {
        let d = self.embedding_size;
        let ff = self.feedforward_size;
        let attn = 4 * (d * d + d);
        let norm = 2 * d;
        let ffwd = d * ff + ff + ff * d + d;
        let enc_layer = attn + ffwd + 2 * norm;
        let dec_layer = 2 * attn + ffwd + 3 * norm;
        (src_vocab + tgt_vocab) * d
            + self.encoder_layers * enc_layer
            + self.decoder_layers * dec_layer
            + 2 * norm
            + d * tgt_vocab
            + tgt_vocab
    }
}

/// The model at training precision.
pub type Model = Seq2Seq<f32>;
/// The model at verification precision (gradient checks).
pub type ModelF64 = Seq2Seq<f64>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_matches_enumeration() {
        let cfg = ModelConfig {
            encoder_layers: 1,
            decoder_layers: 1,
            embedding_size: 64,
            feedforward_size: 256,
            attention_heads: 4,
            dropout: 0.0,
            context_window: 128,
        };
        let mut model = Seq2Seq::<f32>::init(cfg.clone(), 300, 310, 0).unwrap();
        assert_eq!(model.param_count(), cfg.param_count(300, 310));

        let cfg2 = ModelConfig {
            encoder_layers: 2,
            decoder_layers: 3,
            embedding_size: 32,
            feedforward_size: 64,
            attention_heads: 8,
            ..cfg
        };
        let mut model2 = Seq2Seq::<f32>::init(cfg2.clone(), 50, 70, 1).unwrap();
        assert_eq!(model2.param_count(), cfg2.param_count(50, 70));
    }
}

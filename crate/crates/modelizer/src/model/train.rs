//! Teacher-forced training and few-shot fine-tuning.

use super::layers::Scalar;
use super::optim::{clip_gradients, AdamW, Schedule};
use super::seq2seq::{cross_entropy, Seq2Seq};
use super::ModelError;
use crate::tokenize::{BOS_ID, EOS_ID};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub clip_gradients: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            schedule: Schedule::Cosine,
            clip_gradients: true,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.learning_rate < 0.0 {
            return Err(ModelError::ConfigInvalid(
                "learning_rate must be >= 0".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(ModelError::ConfigInvalid(
                "validation_fraction must be in [0,1)".to_string(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch training and validation token-mean losses.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

/// A training pair of token-id sequences, without BOS/EOS framing.
pub type IdPair = (Vec<usize>, Vec<usize>);

fn check_lengths<F: Scalar>(
    model: &Seq2Seq<F>,
    pairs: &[IdPair],
) -> Result<(), ModelError> {
    let max = model.cfg.context_window;
    for (index, (src, tgt)) in pairs.iter().enumerate() {
        let len = src.len().max(tgt.len() + 1);
        if len > max {
            return Err(ModelError::SequenceTooLong { index, len, max });
        }
    }
    Ok(())
}

/// Trains with an 80/20 (configurable) train/validation split.
pub fn train<F: Scalar>(
    model: &mut Seq2Seq<F>,
    pairs: &[IdPair],
    tcfg: &TrainConfig,
) -> Result<LossHistory, ModelError> {
    run_training(model, pairs, tcfg, true, None)
}

/// Like [`train`], but invokes `observer(epoch, train_loss, validation_loss)`
/// after every epoch; returning `false` stops training early (used by the
/// hyperparameter search for pruning).
pub fn train_observed<F: Scalar>(
    model: &mut Seq2Seq<F>,
    pairs: &[IdPair],
    tcfg: &TrainConfig,
    observer: &mut dyn FnMut(usize, f64, f64) -> bool,
) -> Result<LossHistory, ModelError> {
    run_training(model, pairs, tcfg, true, Some(observer))
}

/// Continues training on only the provided pairs — no re-split; used for
/// few-shot adaptation.
pub fn fine_tune<F: Scalar>(
    model: &mut Seq2Seq<F>,
    pairs: &[IdPair],
    tcfg: &TrainConfig,
) -> Result<LossHistory, ModelError> {
    run_training(model, pairs, tcfg, false, None)
}

fn run_training<F: Scalar>(
    model: &mut Seq2Seq<F>,
    pairs: &[IdPair],
    tcfg: &TrainConfig,
    split: bool,
    mut observer: Option<&mut dyn FnMut(usize, f64, f64) -> bool>,
) -> Result<LossHistory, ModelError> {
    tcfg.validate()?;
    check_lengths(model, pairs)?;
    let mut rng = ChaCha12Rng::seed_from_u64(tcfg.seed);

    let mut indices: Vec<usize> = (0..pairs.len()).collect();
    indices.shuffle(&mut rng);
    let val_len = if split {
        ((pairs.len() as f64) * tcfg.validation_fraction).round() as usize
    } else {
        0
    };
    let (val_idx, train_idx) = indices.split_at(val_len);
    let mut train_idx = train_idx.to_vec();
    // Length-bucketed batches: sort by source length, chunk, shuffle the
    // batch order each epoch.
    train_idx.sort_by_key(|&i| (pairs[i].0.len(), i));
    let batches: Vec<Vec<usize>> = train_idx
        .chunks(tcfg.batch_size.max(1))
        .map(|c| c.to_vec())
        .collect();

    let mut opt = AdamW::new(tcfg.weight_decay);
    let mut history = LossHistory::default();
    let mut dropout_rng = ChaCha12Rng::seed_from_u64(tcfg.seed ^ 0x5eed_d20f);
    let use_dropout = model.cfg.dropout > 0.0;

    for epoch in 0..tcfg.epochs {
        let lr = tcfg.schedule.lr_at(tcfg.learning_rate, epoch, tcfg.epochs);
        let mut order: Vec<usize> = (0..batches.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut epoch_tokens = 0usize;

        for (batch_no, &b) in order.iter().enumerate() {
            model.zero_grads();
            let mut states = Vec::with_capacity(batches[b].len());
            let mut batch_loss = F::zero();
            let mut batch_tokens = 0usize;
            for &i in &batches[b] {
                let (src, tgt) = &pairs[i];
                let (tgt_in, tgt_out) = frame(tgt);
                let state = model.forward(
                    src,
                    &tgt_in,
                    if use_dropout { Some(&mut dropout_rng) } else { None },
                );
                let (loss, count, dlogits) = cross_entropy(&state.logits, &tgt_out);
                batch_loss = batch_loss + loss;
                batch_tokens += count;
                states.push((state, dlogits));
            }
            if batch_tokens == 0 {
                continue;
            }
            let loss_value = batch_loss.to_f64().unwrap() / batch_tokens as f64;
            if !loss_value.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            let inv = F::from(1.0 / batch_tokens as f64).unwrap();
            for (state, dlogits) in &states {
                let scaled: Array2<F> = dlogits.mapv(|d| d * inv);
                model.backward(state, &scaled);
            }
            let mut params = model.params_mut();
            if tcfg.clip_gradients {
                clip_gradients(&mut params, 1.0);
            }
            opt.step(&mut params, lr);
            epoch_loss += batch_loss.to_f64().unwrap();
            epoch_tokens += batch_tokens;
        }

        let train_loss = if epoch_tokens > 0 {
            epoch_loss / epoch_tokens as f64
        } else {
            0.0
        };
        let val_loss = if val_idx.is_empty() {
            train_loss
        } else {
            validation_loss(model, pairs, val_idx)?
        };
        history.train.push(train_loss);
        history.validation.push(val_loss);
        if let Some(obs) = observer.as_deref_mut() {
            if !obs(epoch, train_loss, val_loss) {
                break;
            }
        }
    }
    Ok(history)
}

/// Frames a target sequence for teacher forcing: decoder input gets BOS
/// prepended, the training target gets EOS appended.
pub fn frame(tgt: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut tgt_in = Vec::with_capacity(tgt.len() + 1);
    tgt_in.push(BOS_ID);
    tgt_in.extend_from_slice(tgt);
    let mut tgt_out = Vec::with_capacity(tgt.len() + 1);
    tgt_out.extend_from_slice(tgt);
    tgt_out.push(EOS_ID);
    (tgt_in, tgt_out)
}

/// Token-mean validation loss (no dropout, no gradient).
pub fn validation_loss<F: Scalar>(
    model: &Seq2Seq<F>,
    pairs: &[IdPair],
    indices: &[usize],
) -> Result<f64, ModelError> {
    let mut total = 0.0f64;
    let mut tokens = 0usize;
    for &i in indices {
        let (src, tgt) = &pairs[i];
        let (tgt_in, tgt_out) = frame(tgt);
        let state = model.forward(src, &tgt_in, None);
        let (loss, count, _) = cross_entropy(&state.logits, &tgt_out);
        total += loss.to_f64().unwrap();
        tokens += count;
    }
    if tokens == 0 {
        return Ok(0.0);
    }
    Ok(total / tokens as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn micro_model(seed: u64) -> Seq2Seq<f32> {
        let cfg = ModelConfig {
            embedding_size: 16,
            feedforward_size: 32,
            attention_heads: 2,
            context_window: 32,
            ..ModelConfig::default()
        };
        Seq2Seq::init(cfg, 12, 12, seed).unwrap()
    }

    fn copy_pairs(n: usize, seed: u64) -> Vec<IdPair> {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(2..6);
                let seq: Vec<usize> = (0..len).map(|_| rng.gen_range(4..12)).collect();
                (seq.clone(), seq)
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_freezes_loss() {
        let mut model = micro_model(1);
        let pairs = copy_pairs(30, 2);
        let tcfg = TrainConfig {
            learning_rate: 0.0,
            weight_decay: 0.0,
            epochs: 3,
            seed: 3,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &pairs, &tcfg).unwrap();
        let first = history.train[0];
        for &l in &history.train {
            assert!((l - first).abs() < 1e-5, "loss drifted at lr=0: {history:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let pairs = copy_pairs(40, 7);
        let tcfg = TrainConfig {
            epochs: 2,
            seed: 11,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let mut m1 = micro_model(4);
        let h1 = train(&mut m1, &pairs, &tcfg).unwrap();
        let mut m2 = micro_model(4);
        let h2 = train(&mut m2, &pairs, &tcfg).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn copy_task_loss_collapses() {
        let mut model = micro_model(5);
        let pairs = copy_pairs(120, 9);
        let tcfg = TrainConfig {
            learning_rate: 5e-3,
            epochs: 25,
            seed: 13,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &pairs, &tcfg).unwrap();
        let first = history.validation[0];
        let last = *history.validation.last().unwrap();
        assert!(
            last < 0.5 * first,
            "validation loss did not drop: {first} -> {last}"
        );
    }

    #[test]
    fn too_long_sequence_rejected() {
        let mut model = micro_model(6);
        let long = vec![4usize; 40];
        let err = train(
            &mut model,
            &[(long.clone(), long)],
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::SequenceTooLong { index: 0, .. }));
    }

    #[test]
    fn fine_tune_zero_epochs_is_identity() {
        let mut model = micro_model(8);
        let before = model.forward(&[4, 5], &[BOS_ID, 4], None).logits;
        let pairs = copy_pairs(10, 1);
        let tcfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        fine_tune(&mut model, &pairs, &tcfg).unwrap();
        let after = model.forward(&[4, 5], &[BOS_ID, 4], None).logits;
        assert_eq!(before, after);
    }
}

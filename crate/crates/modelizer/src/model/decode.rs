//! Greedy (beam size 1) decoding with the 1.25× length heuristic.

use super::layers::Scalar;
use super::seq2seq::Seq2Seq;
use crate::tokenize::{BOS_ID, EOS_ID};

/// Decoded token ids (BOS/EOS stripped) plus whether the length cap cut
/// the sequence off before EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub tokens: Vec<usize>,
    pub truncated: bool,
}

/// Greedily decodes `src`. Without an explicit `max_len` the emitted token
/// count is capped at ceil(1.25 × len(src)). Argmax ties break toward the
/// lowest token id.
pub fn greedy_decode<F: Scalar>(
    model: &Seq2Seq<F>,
    src: &[usize],
    max_len: Option<usize>,
) -> DecodeOutcome {
    let cap = max_len.unwrap_or_else(|| (1.25 * src.len() as f64).ceil() as usize);
    let mut tgt_in = vec![BOS_ID];
    let mut tokens = Vec::new();
    let mut truncated = true;
    while tokens.len() < cap {
        let state = model.forward(src, &tgt_in, None);
        let row = state.logits.row(tgt_in.len() - 1);
        let mut best = 0usize;
        let mut best_v = row[0];
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > best_v {
                best = j;
                best_v = v;
            }
        }
        if best == EOS_ID {
            truncated = false;
            break;
        }
        tokens.push(best);
        tgt_in.push(best);
    }
    if tokens.len() < cap && truncated {
        // Loop exited only via the cap or EOS; reaching here with spare
        // room means cap was 0.
        truncated = cap == 0;
    }
    DecodeOutcome { tokens, truncated }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{train, ModelConfig, TrainConfig};
    use rand::Rng;
    use rand_chacha::ChaCha12Rng;
    use rand::SeedableRng;

    fn micro_model(seed: u64) -> Seq2Seq<f32> {
        let cfg = ModelConfig {
            embedding_size: 16,
            feedforward_size: 32,
            attention_heads: 2,
            context_window: 64,
            ..ModelConfig::default()
        };
        Seq2Seq::init(cfg, 12, 12, seed).unwrap()
    }

    #[test]
    fn length_cap_is_ceil_of_five_fourths() {
        let model = micro_model(1);
        let src = vec![4usize; 8];
        let out = greedy_decode(&model, &src, None);
        assert!(out.tokens.len() <= 10); // ceil(1.25 * 8)
    }

    #[test]
    fn explicit_max_len_one() {
        let model = micro_model(2);
        let out = greedy_decode(&model, &[4, 5, 6], Some(1));
        assert!(out.tokens.len() <= 1);
    }

    #[test]
    fn trained_copy_model_copies() {
        let mut model = micro_model(3);
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let pairs: Vec<(Vec<usize>, Vec<usize>)> = (0..150)
            .map(|_| {
                let len = rng.gen_range(2..5);
                let seq: Vec<usize> = (0..len).map(|_| rng.gen_range(4..12)).collect();
                (seq.clone(), seq)
            })
            .collect();
        let tcfg = TrainConfig {
            learning_rate: 5e-3,
            epochs: 60,
            seed: 19,
            ..TrainConfig::default()
        };
        train(&mut model, &pairs, &tcfg).unwrap();
        let mut hits = 0;
        let probes: Vec<Vec<usize>> = (0..20)
            .map(|_| {
                let len = rng.gen_range(2..5);
                (0..len).map(|_| rng.gen_range(4..12)).collect()
            })
            .collect();
        for probe in &probes {
            if greedy_decode(&model, probe, None).tokens == *probe {
                hits += 1;
            }
        }
        assert!(hits >= 15, "copy accuracy too low: {hits}/20");
    }
}

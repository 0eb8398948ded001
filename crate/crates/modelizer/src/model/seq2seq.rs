//! The encoder-decoder transformer: construction, forward pass with
//! caches, manual backward pass, and the token-level cross-entropy loss.

use super::layers::{
    positional_encoding, Embedding, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache,
    MhaCache, MultiHeadAttention, Param, Scalar,
};
use super::{ModelConfig, ModelError};
use crate::tokenize::PAD_ID;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

#[derive(Debug, Clone)]
pub struct EncoderLayer<F> {
    ln1: LayerNorm<F>,
    mha: MultiHeadAttention<F>,
    ln2: LayerNorm<F>,
    ff: FeedForward<F>,
}

#[derive(Debug, Clone)]
pub struct DecoderLayer<F> {
    ln1: LayerNorm<F>,
    self_mha: MultiHeadAttention<F>,
    ln2: LayerNorm<F>,
    cross_mha: MultiHeadAttention<F>,
    ln3: LayerNorm<F>,
    ff: FeedForward<F>,
}

/// A pre-norm transformer sequence-to-sequence model processing one
/// sequence pair at a time.
#[derive(Debug, Clone)]
pub struct Seq2Seq<F> {
    pub cfg: ModelConfig,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub seed: u64,
    src_embed: Embedding<F>,
    tgt_embed: Embedding<F>,
    encoder: Vec<EncoderLayer<F>>,
    decoder: Vec<DecoderLayer<F>>,
    enc_norm: LayerNorm<F>,
    dec_norm: LayerNorm<F>,
    proj: super::layers::Linear<F>,
    pe: Array2<F>,
}

pub struct EncoderLayerCache<F> {
    ln1: LayerNormCache<F>,
    mha: MhaCache<F>,
    drop1: Option<Array2<F>>,
    ln2: LayerNormCache<F>,
    ff: FeedForwardCache<F>,
    drop2: Option<Array2<F>>,
}

pub struct DecoderLayerCache<F> {
    ln1: LayerNormCache<F>,
    self_mha: MhaCache<F>,
    drop1: Option<Array2<F>>,
    ln2: LayerNormCache<F>,
    cross_mha: MhaCache<F>,
    drop2: Option<Array2<F>>,
    ln3: LayerNormCache<F>,
    ff: FeedForwardCache<F>,
    drop3: Option<Array2<F>>,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardState<F> {
    pub src: Vec<usize>,
    pub tgt_in: Vec<usize>,
    pub logits: Array2<F>,
    src_drop: Option<Array2<F>>,
    tgt_drop: Option<Array2<F>>,
    enc_caches: Vec<EncoderLayerCache<F>>,
    enc_norm: LayerNormCache<F>,
    pub enc_out: Array2<F>,
    dec_caches: Vec<DecoderLayerCache<F>>,
    dec_norm: LayerNormCache<F>,
    dec_out: Array2<F>,
}

fn pad_mask(rows: usize, keys: &[usize]) -> Option<Array2<bool>> {
    if keys.iter().all(|&k| k != PAD_ID) {
        return None;
    }
    Some(Array2::from_shape_fn((rows, keys.len()), |(_, j)| {
        keys[j] == PAD_ID
    }))
}

fn causal_pad_mask(tgt_in: &[usize]) -> Array2<bool> {
    let n = tgt_in.len();
    Array2::from_shape_fn((n, n), |(i, j)| j > i || tgt_in[j] == PAD_ID)
}

impl<F: Scalar> Seq2Seq<F> {
    pub fn init(
        cfg: ModelConfig,
        src_vocab_size: usize,
        tgt_vocab_size: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let d = cfg.embedding_size;
        let src_embed = Embedding::new(src_vocab_size, d, &mut rng);
        let tgt_embed = Embedding::new(tgt_vocab_size, d, &mut rng);
        let encoder = (0..cfg.encoder_layers)
            .map(|_| EncoderLayer {
                ln1: LayerNorm::new(d),
                mha: MultiHeadAttention::new(d, cfg.attention_heads, &mut rng),
                ln2: LayerNorm::new(d),
                ff: FeedForward::new(d, cfg.feedforward_size, &mut rng),
            })
            .collect();
        let decoder = (0..cfg.decoder_layers)
            .map(|_| DecoderLayer {
                ln1: LayerNorm::new(d),
                self_mha: MultiHeadAttention::new(d, cfg.attention_heads, &mut rng),
                ln2: LayerNorm::new(d),
                cross_mha: MultiHeadAttention::new(d, cfg.attention_heads, &mut rng),
                ln3: LayerNorm::new(d),
                ff: FeedForward::new(d, cfg.feedforward_size, &mut rng),
            })
            .collect();
        let enc_norm = LayerNorm::new(d);
        let dec_norm = LayerNorm::new(d);
        let proj = super::layers::Linear::new(d, tgt_vocab_size, &mut rng);
        let pe = positional_encoding(cfg.context_window, d);
        Ok(Seq2Seq {
            cfg,
            src_vocab_size,
            tgt_vocab_size,
            seed,
            src_embed,
            tgt_embed,
            encoder,
            decoder,
            enc_norm,
            dec_norm,
            proj,
            pe,
        })
    }

    fn dropout(
        &self,
        x: &mut Array2<F>,
        rng: Option<&mut ChaCha12Rng>,
    ) -> Option<Array2<F>> {
        let rate = self.cfg.dropout;
        let rng = rng?;
        if rate <= 0.0 {
            return None;
        }
        let keep = F::from(1.0 / (1.0 - rate)).unwrap();
        let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
            if rng.gen::<f64>() < rate {
                F::zero()
            } else {
                keep
            }
        });
        *x = &*x * &mask;
        Some(mask)
    }

    /// Runs the full forward pass; `rng` enables dropout (training mode).
    pub fn forward(
        &self,
        src: &[usize],
        tgt_in: &[usize],
        mut rng: Option<&mut ChaCha12Rng>,
    ) -> ForwardState<F> {
        let src_mask = pad_mask(src.len(), src);
        let cross_mask = pad_mask(tgt_in.len(), src);
        let self_mask = causal_pad_mask(tgt_in);

        let mut x = self.src_embed.forward(src, &self.pe);
        let src_drop = self.dropout(&mut x, rng.as_deref_mut());
        let mut enc_caches = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (a, ln1) = layer.ln1.forward(&x);
            let (mut m, mha) = layer.mha.forward(&a, &a, src_mask.as_ref());
            let drop1 = self.dropout(&mut m, rng.as_deref_mut());
            let x1 = &x + &m;
            let (b, ln2) = layer.ln2.forward(&x1);
            let (mut f, ff) = layer.ff.forward(&b);
            let drop2 = self.dropout(&mut f, rng.as_deref_mut());
            let x2 = &x1 + &f;
            enc_caches.push(EncoderLayerCache {
                ln1,
                mha,
                drop1,
                ln2,
                ff,
                drop2,
            });
            x = x2;
        }
        let (enc_out, enc_norm) = self.enc_norm.forward(&x);

        let mut y = self.tgt_embed.forward(tgt_in, &self.pe);
        let tgt_drop = self.dropout(&mut y, rng.as_deref_mut());
        let mut dec_caches = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let (a, ln1) = layer.ln1.forward(&y);
            let (mut m, self_mha) = layer.self_mha.forward(&a, &a, Some(&self_mask));
            let drop1 = self.dropout(&mut m, rng.as_deref_mut());
            let x1 = &y + &m;
            let (b, ln2) = layer.ln2.forward(&x1);
            let (mut c, cross_mha) = layer.cross_mha.forward(&b, &enc_out, cross_mask.as_ref());
            let drop2 = self.dropout(&mut c, rng.as_deref_mut());
            let x2 = &x1 + &c;
            let (e, ln3) = layer.ln3.forward(&x2);
            let (mut f, ff) = layer.ff.forward(&e);
            let drop3 = self.dropout(&mut f, rng.as_deref_mut());
            let x3 = &x2 + &f;
            dec_caches.push(DecoderLayerCache {
                ln1,
                self_mha,
                drop1,
                ln2,
                cross_mha,
                drop2,
                ln3,
                ff,
                drop3,
            });
            y = x3;
        }
        let (dec_out, dec_norm) = self.dec_norm.forward(&y);
        let logits = self.proj.forward(&dec_out);

        ForwardState {
            src: src.to_vec(),
            tgt_in: tgt_in.to_vec(),
            logits,
            src_drop,
            tgt_drop,
            enc_caches,
            enc_norm,
            enc_out,
            dec_caches,
            dec_norm,
            dec_out,
        }
    }

    /// Accumulates parameter gradients from `dlogits`.
    pub fn backward(&mut self, state: &ForwardState<F>, dlogits: &Array2<F>) {
        let ddec_out = self.proj.backward(&state.dec_out, dlogits);
        let mut dy = self.dec_norm.backward(&state.dec_norm, &ddec_out);
        let mut denc_out: Array2<F> = Array2::zeros(state.enc_out.raw_dim());

        for (layer, cache) in self.decoder.iter_mut().zip(&state.dec_caches).rev() {
            // x3 = x2 + drop3∘FF(LN3(x2))
            let mut df = dy.clone();
            if let Some(mask) = &cache.drop3 {
                df = &df * mask;
            }
            let de = layer.ff.backward(&cache.ff, &df);
            let dx2 = &dy + &layer.ln3.backward(&cache.ln3, &de);
            // x2 = x1 + drop2∘Cross(LN2(x1), enc_out)
            let mut dc = dx2.clone();
            if let Some(mask) = &cache.drop2 {
                dc = &dc * mask;
            }
            let (db, dkv) = layer.cross_mha.backward(&cache.cross_mha, &dc);
            denc_out = &denc_out + &dkv;
            let dx1 = &dx2 + &layer.ln2.backward(&cache.ln2, &db);
            // x1 = y + drop1∘Self(LN1(y))
            let mut dm = dx1.clone();
            if let Some(mask) = &cache.drop1 {
                dm = &dm * mask;
            }
            let (da_q, da_kv) = layer.self_mha.backward(&cache.self_mha, &dm);
            let da = da_q + da_kv;
            dy = &dx1 + &layer.ln1.backward(&cache.ln1, &da);
        }
        let mut dtgt_embed = dy;
        if let Some(mask) = &state.tgt_drop {
            dtgt_embed = &dtgt_embed * mask;
        }
        self.tgt_embed.backward(&state.tgt_in, &dtgt_embed);

        let mut dx = self.enc_norm.backward(&state.enc_norm, &denc_out);
        for (layer, cache) in self.encoder.iter_mut().zip(&state.enc_caches).rev() {
            let mut df = dx.clone();
            if let Some(mask) = &cache.drop2 {
                df = &df * mask;
            }
            let db = layer.ff.backward(&cache.ff, &df);
            let dx1 = &dx + &layer.ln2.backward(&cache.ln2, &db);
            let mut dm = dx1.clone();
            if let Some(mask) = &cache.drop1 {
                dm = &dm * mask;
            }
            let (da_q, da_kv) = layer.mha.backward(&cache.mha, &dm);
            let da = da_q + da_kv;
            dx = &dx1 + &layer.ln1.backward(&cache.ln1, &da);
        }
        let mut dsrc_embed = dx;
        if let Some(mask) = &state.src_drop {
            dsrc_embed = &dsrc_embed * mask;
        }
        self.src_embed.backward(&state.src, &dsrc_embed);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = self.src_embed.params_mut();
        out.extend(self.tgt_embed.params_mut());
        for layer in &mut self.encoder {
            out.extend(layer.ln1.params_mut());
            out.extend(layer.mha.params_mut());
            out.extend(layer.ln2.params_mut());
            out.extend(layer.ff.params_mut());
        }
        out.extend(self.enc_norm.params_mut());
        for layer in &mut self.decoder {
            out.extend(layer.ln1.params_mut());
            out.extend(layer.self_mha.params_mut());
            out.extend(layer.ln2.params_mut());
            out.extend(layer.cross_mha.params_mut());
            out.extend(layer.ln3.params_mut());
            out.extend(layer.ff.params_mut());
        }
        out.extend(self.dec_norm.params_mut());
        out.extend(self.proj.params_mut());
        out
    }

    /// Actual number of scalar parameters (by enumeration).
    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.g.fill(F::zero());
        }
    }
}

/// Token-mean cross entropy over non-PAD target positions. Returns
/// (summed loss, counted tokens, dlogits for a loss normalized later by
/// the caller).
pub fn cross_entropy<F: Scalar>(
    logits: &Array2<F>,
    targets: &[usize],
) -> (F, usize, Array2<F>) {
    let mut loss = F::zero();
    let mut count = 0usize;
    let mut dlogits = Array2::zeros(logits.raw_dim());
    for (i, &t) in targets.iter().enumerate() {
        if t == PAD_ID {
            continue;
        }
        count += 1;
        let row = logits.row(i);
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let log_z = row
            .iter()
            .map(|&v| (v - max).exp())
            .fold(F::zero(), |a, b| a + b)
            .ln()
            + max;
        loss = loss + (log_z - row[t]);
        let mut drow = dlogits.row_mut(i);
        for (j, d) in drow.iter_mut().enumerate() {
            *d = (row[j] - log_z).exp();
        }
        drow[t] = drow[t] - F::one();
    }
    (loss, count, dlogits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::{BOS_ID, EOS_ID};

    fn micro_cfg() -> ModelConfig {
        ModelConfig {
            encoder_layers: 1,
            decoder_layers: 1,
            embedding_size: 8,
            feedforward_size: 16,
            attention_heads: 2,
            dropout: 0.0,
            context_window: 64,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = Seq2Seq::<f32>::init(micro_cfg(), 12, 12, 5).unwrap();
        let b = Seq2Seq::<f32>::init(micro_cfg(), 12, 12, 5).unwrap();
        let src = vec![4, 5, 6];
        let tgt = vec![BOS_ID, 4, 5];
        let fa = a.forward(&src, &tgt, None);
        let fb = b.forward(&src, &tgt, None);
        assert_eq!(fa.logits, fb.logits);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = ModelConfig {
            embedding_size: 4,
            attention_heads: 5,
            ..micro_cfg()
        };
        assert!(matches!(
            Seq2Seq::<f32>::init(cfg, 12, 12, 0),
            Err(ModelError::ConfigInvalid(_))
        ));
    }

    #[test]
    fn initial_loss_near_uniform() {
        let model = Seq2Seq::<f32>::init(micro_cfg(), 12, 12, 3).unwrap();
        let src = vec![4, 5, 6, 7];
        let tgt_in = vec![BOS_ID, 4, 5, 6];
        let tgt_out = vec![4, 5, 6, EOS_ID];
        let state = model.forward(&src, &tgt_in, None);
        let (loss, count, _) = cross_entropy(&state.logits, &tgt_out);
        let per_token = loss / count as f32;
        let uniform = (12f32).ln();
        assert!(
            (per_token - uniform).abs() / uniform < 0.15,
            "per-token {per_token} vs ln|V| {uniform}"
        );
    }

    #[test]
    fn causal_masking_blocks_future_targets() {
        let model = Seq2Seq::<f32>::init(micro_cfg(), 12, 12, 9).unwrap();
        let src = vec![4, 5, 6];
        let a = model.forward(&src, &[BOS_ID, 4, 5, 6], None);
        let b = model.forward(&src, &[BOS_ID, 4, 9, 10], None);
        // Position 0 and 1 logits depend only on tgt_in[..=pos].
        assert_eq!(a.logits.row(0), b.logits.row(0));
        assert_eq!(a.logits.row(1), b.logits.row(1));
        assert_ne!(a.logits.row(2), b.logits.row(2));
    }

    #[test]
    fn padding_is_neutral() {
        let model = Seq2Seq::<f64>::init(micro_cfg(), 12, 12, 11).unwrap();
        let tgt_in = vec![BOS_ID, 4, 5];
        let tgt_out = vec![4, 5, EOS_ID];
        let base = model.forward(&[4, 5, 6], &tgt_in, None);
        let (l1, c1, _) = cross_entropy(&base.logits, &tgt_out);

        let mut tgt_in_p = tgt_in.clone();
        let mut tgt_out_p = tgt_out.clone();
        tgt_in_p.extend([PAD_ID; 3]);
        tgt_out_p.extend([PAD_ID; 3]);
        let padded = model.forward(&[4, 5, 6, PAD_ID, PAD_ID], &tgt_in_p, None);
        let (l2, c2, _) = cross_entropy(&padded.logits, &tgt_out_p);
        assert_eq!(c1, c2);
        assert!((l1 - l2).abs() < 1e-9, "loss changed under padding: {l1} vs {l2}");
    }

    #[test]
    fn attention_rows_normalized() {
        let model = Seq2Seq::<f64>::init(micro_cfg(), 12, 12, 2).unwrap();
        let state = model.forward(&[4, 5, 6, 7], &[BOS_ID, 4, 5], None);
        // Sanity via logits finiteness; row normalization is asserted
        // inside masked_softmax tests — here check nothing blew up.
        assert!(state.logits.iter().all(|v| v.is_finite()));
    }
}

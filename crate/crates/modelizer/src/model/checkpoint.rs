//! Self-describing binary checkpoint: magic bytes, format version,
//! JSON metadata block (config, vocabularies, seed, loss history), weight
//! blob, and a trailing SHA-384 checksum.

use super::layers::Scalar;
use super::seq2seq::Seq2Seq;
use super::train::LossHistory;
use super::{ModelConfig, ModelError};
use crate::tokenize::Vocabulary;
use sha2::{Digest, Sha384};
use std::path::Path;

const MAGIC: &[u8; 8] = b"MDLZRCKP";
const VERSION: u32 = 1;

/// Checkpoint metadata that travels with the weights.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct Header {
    config: ModelConfig,
    src_tokens: Vec<String>,
    tgt_tokens: Vec<String>,
    seed: u64,
    history: LossHistory,
}

/// A loaded checkpoint: the model plus its vocabularies and provenance.
pub struct Checkpoint<F> {
    pub model: Seq2Seq<F>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub history: LossHistory,
}

pub fn save_checkpoint<F: Scalar>(
    model: &mut Seq2Seq<F>,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    history: &LossHistory,
    path: &Path,
) -> Result<(), ModelError> {
    let header = Header {
        config: model.cfg.clone(),
        src_tokens: src_vocab.tokens().to_vec(),
        tgt_tokens: tgt_vocab.tokens().to_vec(),
        seed: model.seed,
        history: history.clone(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| ModelError::Malformed(e.to_string()))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    let mut count = 0u64;
    let mut weights = Vec::new();
    for p in model.params_mut() {
        for &w in p.w.iter() {
            weights.extend_from_slice(&w.to_f64().unwrap().to_le_bytes());
            count += 1;
        }
    }
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&weights);
    let checksum = Sha384::digest(&buf);
    buf.extend_from_slice(&checksum);
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Checkpoint<F>, ModelError> {
    let data = std::fs::read(path)?;
    let digest_len = 48; // SHA-384
    if data.len() < MAGIC.len() + 4 + 8 + digest_len {
        return Err(ModelError::ChecksumMismatch);
    }
    let (body, stored_sum) = data.split_at(data.len() - digest_len);
    let computed = Sha384::digest(body);
    if computed.as_slice() != stored_sum {
        return Err(ModelError::ChecksumMismatch);
    }
    if &body[..8] != MAGIC {
        return Err(ModelError::Malformed("bad magic bytes".to_string()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let header_end = 20 + header_len;
    let header: Header = serde_json::from_slice(&body[20..header_end])
        .map_err(|e| ModelError::Malformed(e.to_string()))?;
    let count =
        u64::from_le_bytes(body[header_end..header_end + 8].try_into().unwrap()) as usize;
    let blob = &body[header_end + 8..];
    if blob.len() != count * 8 {
        return Err(ModelError::Malformed(format!(
            "weight blob holds {} bytes, expected {}",
            blob.len(),
            count * 8
        )));
    }

    let src_vocab = Vocabulary::from_token_list(header.src_tokens.clone());
    let tgt_vocab = Vocabulary::from_token_list(header.tgt_tokens.clone());
    let mut model = Seq2Seq::<F>::init(
        header.config.clone(),
        src_vocab.len(),
        tgt_vocab.len(),
        header.seed,
    )?;
    let expected = model.param_count();
    if expected != count {
        return Err(ModelError::Malformed(format!(
            "checkpoint stores {count} weights, config implies {expected}"
        )));
    }
    let mut offset = 0;
    for p in model.params_mut() {
        for w in p.w.iter_mut() {
            let raw = f64::from_le_bytes(blob[offset..offset + 8].try_into().unwrap());
            *w = F::from(raw).unwrap();
            offset += 8;
        }
    }
    Ok(Checkpoint {
        model,
        src_vocab,
        tgt_vocab,
        history: header.history,
    })
}

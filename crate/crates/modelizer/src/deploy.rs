//! The four-phase prediction pipeline: tokenize → predict → reconstruct →
//! (optionally) validate against the program under test. Works in forward
//! mode (input → output) and inverse mode (output → input).

use crate::generate::{GenerateError, Put};
use crate::metrics::{evaluate, EvaluationReport, MetricsError};
use crate::model::{greedy_decode, load_checkpoint, Model, ModelError};
use crate::tokenize::{
    mapped_tokenize, reconstruct, Format, Instantiation, MappedText, MaskPolicy, PlaceholderMap,
    TokenizeError, Vocabulary, UNK_ID,
};
use std::path::Path;
use thiserror::Error;

/// Visible sentinel emitted where the model produced an out-of-vocabulary
/// token, so failures stay diagnosable instead of silently vanishing.
pub const UNK_SENTINEL: &str = "⟨UNK⟩";

#[derive(Debug, Error)]
pub enum DeployError {
    #[error("input text is empty")]
    EmptyInput,
    #[error(
        "vocabulary does not cover the {format} token set ({found}/{probed} structural tokens present)"
    )]
    VocabularyMismatch {
        format: String,
        found: usize,
        probed: usize,
    },
    #[error("no program under test configured for validation")]
    PutNotConfigured,
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Put(#[from] GenerateError),
}

/// Translation direction relative to the program under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Source = PUT input format, target = PUT output format.
    Forward,
    /// Source = PUT output format, target = PUT input format.
    Inverse,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "forward" => Ok(Mode::Forward),
            "inverse" => Ok(Mode::Inverse),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Everything needed to serve predictions: the trained model, its
/// vocabularies, the tokenizer formats on each side, and an optional PUT
/// for validation. Immutable after load.
pub struct DeploymentSession {
    pub model: Model,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub source_format: Format,
    pub target_format: Format,
    pub policy: MaskPolicy,
    pub mode: Mode,
    pub put: Option<Put>,
    pub max_len: Option<usize>,
}

/// Per-phase record of one prediction.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Trace {
    /// Phase 1: masked tokens of the input text.
    pub input_tokens: Vec<String>,
    pub input_ids: Vec<usize>,
    /// Phase 2: raw decoded ids.
    pub predicted_ids: Vec<usize>,
    /// Phase 3: decoded tokens (UNK already replaced by the sentinel).
    pub predicted_tokens: Vec<String>,
    /// Placeholders the model emitted that have no binding in the input's
    /// map; left verbatim in the best-effort output.
    pub unbound: Vec<String>,
    pub truncated: bool,
}

/// The verdict of inverse validation: the PUT either rejects the predicted
/// input outright, or its fresh output is scored against the original.
#[derive(Debug)]
pub enum InverseVerdict {
    Rejected { reason: String },
    Accepted(EvaluationReport),
}

/// Structural tokens a vocabulary must largely contain to plausibly match
/// the claimed format.
fn probe_tokens(format: Format) -> Vec<&'static str> {
    match format {
        Format::Markdown => vec!["\n", "# ", "**", "*", "`"],
        Format::Html => vec!["<h1>", "</h1>", "<p>", "</p>", "<strong>", "</strong>", "\n"],
    }
}

/// Requires at least half of the format's structural tokens to be present.
fn coverage_probe(format: Format, vocab: &Vocabulary) -> Result<(), DeployError> {
    let probes = probe_tokens(format);
    let found = probes.iter().filter(|t| vocab.id(t) != UNK_ID).count();
    if found * 2 < probes.len() {
        return Err(DeployError::VocabularyMismatch {
            format: format.name().to_string(),
            found,
            probed: probes.len(),
        });
    }
    Ok(())
}

impl DeploymentSession {
    /// Loads a checkpoint and verifies both vocabularies against the
    /// claimed formats via the coverage probe.
    pub fn load(
        checkpoint: &Path,
        source_format: Format,
        target_format: Format,
        policy: MaskPolicy,
        mode: Mode,
        put: Option<Put>,
        max_len: Option<usize>,
    ) -> Result<Self, DeployError> {
        let ckpt = load_checkpoint::<f32>(checkpoint)?;
        let session = DeploymentSession {
            model: ckpt.model,
            src_vocab: ckpt.src_vocab,
            tgt_vocab: ckpt.tgt_vocab,
            source_format,
            target_format,
            policy,
            mode,
            put,
            max_len,
        };
        coverage_probe(source_format, &session.src_vocab)?;
        coverage_probe(target_format, &session.tgt_vocab)?;
        Ok(session)
    }

    /// Runs the full prediction pipeline on one document.
    pub fn predict(&self, text: &str) -> Result<(String, Trace), DeployError> {
        if text.is_empty() {
            return Err(DeployError::EmptyInput);
        }
        // Phase 1: tokenize and mask.
        let MappedText { tokens, map, .. } =
            mapped_tokenize(text, self.source_format, self.policy)?;
        let ids = self.src_vocab.encode(&tokens);

        // Phase 2: greedy decoding under the length cap.
        let outcome = greedy_decode(&self.model, &ids, self.max_len);

        // Phase 3: back to tokens, with UNKs made visible.
        let predicted_tokens: Vec<String> = outcome
            .tokens
            .iter()
            .map(|&id| {
                if id == UNK_ID {
                    UNK_SENTINEL.to_string()
                } else {
                    self.tgt_vocab.token(id).to_string()
                }
            })
            .collect();

        // Phase 4: reconstruct with the input's placeholder map. Unbound
        // placeholders are reported and kept verbatim.
        let (lenient_map, unbound) = bind_all(&map, &predicted_tokens);
        let output = reconstruct(
            &predicted_tokens,
            Some(&lenient_map),
            Instantiation::Early,
            None,
        )?;

        let trace = Trace {
            input_tokens: tokens,
            input_ids: ids,
            predicted_ids: outcome.tokens,
            predicted_tokens,
            unbound,
            truncated: outcome.truncated,
        };
        Ok((output, trace))
    }

    fn put(&self) -> Result<&Put, DeployError> {
        self.put.as_ref().ok_or(DeployError::PutNotConfigured)
    }

    /// The format the PUT emits: the target side of a forward session, the
    /// source side of an inverse one.
    fn put_output_format(&self) -> Format {
        match self.mode {
            Mode::Forward => self.target_format,
            Mode::Inverse => self.source_format,
        }
    }

    /// Forward-mode validation: run the PUT on the true input and score the
    /// prediction against the PUT's output (the reference).
    pub fn validate_forward(
        &self,
        input_text: &str,
        predicted_text: &str,
    ) -> Result<EvaluationReport, DeployError> {
        let actual = self.put()?.run(input_text)?;
        let fmt = self.put_output_format();
        let reference = mapped_tokenize(&actual, fmt, self.policy)?.tokens;
        let hypothesis = mapped_tokenize(predicted_text, fmt, self.policy)?.tokens;
        Ok(evaluate(&[reference], &[hypothesis])?)
    }

    /// Inverse-mode validation: run the PUT on the predicted input; a PUT
    /// failure is a rejection verdict, not a fault. On success the fresh
    /// output is scored against the original output — the true input is
    /// never assumed known.
    pub fn validate_inverse(
        &self,
        original_output: &str,
        predicted_input: &str,
    ) -> Result<InverseVerdict, DeployError> {
        let fresh = match self.put()?.run(predicted_input) {
            Ok(out) => out,
            Err(e @ (GenerateError::PutFailure { .. } | GenerateError::PutTimeout(_))) => {
                return Ok(InverseVerdict::Rejected {
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(e.into()),
        };
        let fmt = self.put_output_format();
        let reference = mapped_tokenize(original_output, fmt, self.policy)?.tokens;
        let hypothesis = mapped_tokenize(&fresh, fmt, self.policy)?.tokens;
        Ok(InverseVerdict::Accepted(evaluate(
            &[reference],
            &[hypothesis],
        )?))
    }
}

/// Extends `map` with self-bindings for any placeholder token in `tokens`
/// that the map cannot resolve, so reconstruction leaves it verbatim.
/// Returns the extended map and the list of unbound placeholders.
fn bind_all(map: &PlaceholderMap, tokens: &[String]) -> (PlaceholderMap, Vec<String>) {
    let pattern = regex::Regex::new(r"^(?:TEXT|URL)(?:_[0-9]+)?$").unwrap();
    let mut extended = map.clone();
    let mut unbound = Vec::new();
    for token in tokens {
        if !pattern.is_match(token) {
            continue;
        }
        let uses = tokens.iter().filter(|t| *t == token).count();
        let bound = extended
            .entries
            .iter()
            .filter(|(k, _)| k == token)
            .count();
        if uses > bound {
            for _ in bound..uses {
                extended.entries.push((token.clone(), token.clone()));
            }
            if !unbound.contains(token) {
                unbound.push(token.clone());
            }
        }
    }
    (extended, unbound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{save_checkpoint, train, LossHistory, ModelConfig, Seq2Seq, TrainConfig};
    use crate::subject::builtin_convert;
    use crate::tokenize::build_vocabulary;

    /// Trains a tiny forward model (Markdown → HTML) on a handful of
    /// simple documents and wraps it in a session.
    fn toy_session(dir: &Path) -> DeploymentSession {
        toy_session_with(dir, Some(32))
    }

    fn toy_session_with(dir: &Path, max_len: Option<usize>) -> DeploymentSession {
        let inputs = [
            "# Alpha\n",
            "# Beta\n",
            "**bold**\n",
            "**mark**\n",
            "**bold** word\n",
            "**strong** text\n",
            "plain line\n",
            "`code` here\n",
            "*em* note\n",
        ];
        let mut src_corpus = Vec::new();
        let mut tgt_corpus = Vec::new();
        let mut pairs = Vec::new();
        let mapped: Vec<(MappedText, MappedText)> = inputs
            .iter()
            .map(|i| {
                let o = builtin_convert(i).unwrap();
                (
                    mapped_tokenize(i, Format::Markdown, MaskPolicy::Optimizing).unwrap(),
                    mapped_tokenize(&o, Format::Html, MaskPolicy::Optimizing).unwrap(),
                )
            })
            .collect();
        for (src, tgt) in &mapped {
            src_corpus.push(src.tokens.clone());
            tgt_corpus.push(tgt.tokens.clone());
        }
        let src_vocab = build_vocabulary(&src_corpus);
        let tgt_vocab = build_vocabulary(&tgt_corpus);
        for (src, tgt) in &mapped {
            pairs.push((src_vocab.encode(&src.tokens), tgt_vocab.encode(&tgt.tokens)));
        }
        let cfg = ModelConfig {
            embedding_size: 32,
            feedforward_size: 64,
            attention_heads: 4,
            context_window: 64,
            ..ModelConfig::default()
        };
        let mut model: Seq2Seq<f32> =
            Seq2Seq::init(cfg, src_vocab.len(), tgt_vocab.len(), 21).unwrap();
        let tcfg = TrainConfig {
            learning_rate: 5e-3,
            epochs: 120,
            batch_size: 4,
            validation_fraction: 0.0,
            seed: 23,
            ..TrainConfig::default()
        };
        train(&mut model, &pairs, &tcfg).unwrap();
        let path = dir.join("toy.ckpt");
        save_checkpoint(&mut model, &src_vocab, &tgt_vocab, &LossHistory::default(), &path)
            .unwrap();
        DeploymentSession::load(
            &path,
            Format::Markdown,
            Format::Html,
            MaskPolicy::Optimizing,
            Mode::Forward,
            Some(Put::Builtin),
            max_len,
        )
        .unwrap()
    }

    #[test]
    fn empty_input_is_rejected_before_prediction() {
        let dir = tempfile::tempdir().unwrap();
        let session = toy_session(dir.path());
        assert!(matches!(session.predict(""), Err(DeployError::EmptyInput)));
    }

    #[test]
    fn toy_forward_prediction_matches_converter() {
        let dir = tempfile::tempdir().unwrap();
        let session = toy_session(dir.path());
        let input = "**TEXT_1**\n";
        let (predicted, trace) = session.predict(input).unwrap();
        let expected = builtin_convert(input).unwrap();
        assert_eq!(predicted, expected, "trace: {trace:?}");
        // Phase isolation: phase-1 tokens reconstruct the original input.
        let mapped = mapped_tokenize(input, Format::Markdown, MaskPolicy::Optimizing).unwrap();
        let rebuilt = reconstruct(
            &trace.input_tokens,
            Some(&mapped.map),
            Instantiation::Early,
            Some(&mapped.layout),
        )
        .unwrap();
        assert_eq!(rebuilt, input);
    }

    #[test]
    fn length_cap_bounds_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let session = toy_session_with(dir.path(), None);
        let (_, trace) = session.predict("plain words\n").unwrap();
        let cap = (1.25 * trace.input_ids.len() as f64).ceil() as usize;
        assert!(trace.predicted_ids.len() <= cap);
    }

    #[test]
    fn validate_forward_scores_perfect_prediction() {
        let dir = tempfile::tempdir().unwrap();
        let session = toy_session(dir.path());
        let input = "# Alpha\n";
        let truth = builtin_convert(input).unwrap();
        let report = session.validate_forward(input, &truth).unwrap();
        assert_eq!(report.exact_match, 100.0);
        assert!((report.bleu - 1.0).abs() < 1e-12);
        assert_eq!(report.wer, 0.0);
    }

    #[test]
    fn validate_inverse_rejects_invalid_input() {
        let dir = tempfile::tempdir().unwrap();
        let session = toy_session(dir.path());
        // `###` is outside the converter's subset, so the PUT rejects it.
        let verdict = session
            .validate_inverse("<h1>Alpha</h1>", "### nope\n")
            .unwrap();
        assert!(matches!(verdict, InverseVerdict::Rejected { .. }));
    }

    #[test]
    fn validate_inverse_accepts_equivalent_input() {
        let dir = tempfile::tempdir().unwrap();
        let session = toy_session(dir.path());
        let original = builtin_convert("**bold** word\n").unwrap();
        let verdict = session
            .validate_inverse(&original, "**bold** word\n")
            .unwrap();
        match verdict {
            InverseVerdict::Accepted(report) => {
                assert_eq!(report.exact_match, 100.0);
            }
            InverseVerdict::Rejected { reason } => panic!("rejected: {reason}"),
        }
    }

    #[test]
    fn unbound_placeholder_left_verbatim() {
        let map = PlaceholderMap {
            entries: vec![("TEXT_1".to_string(), "hello".to_string())],
        };
        let tokens: Vec<String> = ["<p>", "TEXT_1", "TEXT_2", "</p>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (extended, unbound) = bind_all(&map, &tokens);
        assert_eq!(unbound, vec!["TEXT_2".to_string()]);
        let out = reconstruct(&tokens, Some(&extended), Instantiation::Early, None).unwrap();
        assert_eq!(out, "<p>helloTEXT_2</p>");
    }

    #[test]
    fn mismatched_vocabulary_fails_probe() {
        let dir = tempfile::tempdir().unwrap();
        let session = toy_session(dir.path());
        let path = dir.path().join("toy.ckpt");
        drop(session);
        // Claiming the source side is HTML must fail: the vocabulary holds
        // Markdown structure.
        let err = match DeploymentSession::load(
            &path,
            Format::Html,
            Format::Html,
            MaskPolicy::Optimizing,
            Mode::Forward,
            None,
            None,
        ) {
            Err(e) => e,
            Ok(_) => panic!("expected the coverage probe to fail"),
        };
        assert!(matches!(err, DeployError::VocabularyMismatch { .. }));
    }
}

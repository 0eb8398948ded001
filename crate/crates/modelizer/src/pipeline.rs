//! Declarative end-to-end orchestration: generate → collect → tokenize →
//! (optional tune) → train forward → train inverse → evaluate both.
//!
//! Stages are idempotent: each writes one artifact into the dataset
//! directory and is skipped when that artifact already exists, so an
//! interrupted run resumes where it stopped.

use crate::generate::{collect_pairs, Dataset, GenerateError, GeneratorConfig, Put};
use crate::grammar::{parse_bnf, Grammar, GrammarError};
use crate::hyperopt::{
    search_learning_rate, search_model_params, HyperoptError, SearchReport, SearchSpace,
};
use crate::metrics::{evaluate, EvaluationReport, MetricsError};
use crate::model::{
    greedy_decode, load_checkpoint, save_checkpoint, train, IdPair, ModelConfig, ModelError,
    Seq2Seq, TrainConfig,
};
use crate::tokenize::{
    build_vocabulary, mapped_tokenize, Format, MaskPolicy, TokenizeError, Vocabulary, EOS_ID,
};
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Hyperopt(#[from] HyperoptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn at(stage: &'static str, e: impl Into<PipelineError>) -> PipelineError {
    PipelineError::Stage {
        stage,
        source: Box::new(e.into()),
    }
}

/// The program under test: either the builtin converter or an external
/// command fed on stdin.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SubjectSpec {
    #[serde(default)]
    pub builtin: bool,
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl SubjectSpec {
    pub fn to_put(&self) -> Result<Put, PipelineError> {
        if self.builtin {
            Ok(Put::Builtin)
        } else if !self.command.is_empty() {
            Ok(Put::Command {
                argv: self.command.clone(),
                timeout: Duration::from_millis(self.timeout_ms),
            })
        } else {
            Err(PipelineError::Config(
                "subject must set builtin = true or a non-empty command".to_string(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GenerationSection {
    /// Training pairs to collect.
    pub pairs: usize,
    /// Additional held-out pairs for evaluation.
    pub holdout: usize,
    pub min_expansions: usize,
    pub max_expansions: usize,
    pub seed: u64,
    pub refiner: Option<String>,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            pairs: 2000,
            holdout: 200,
            min_expansions: 10,
            max_expansions: 20,
            seed: 1,
            refiner: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TokenizationSection {
    pub policy: MaskPolicy,
    pub source_format: Format,
    pub target_format: Format,
}

impl Default for TokenizationSection {
    fn default() -> Self {
        TokenizationSection {
            policy: MaskPolicy::Optimizing,
            source_format: Format::Markdown,
            target_format: Format::Html,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TuningSection {
    pub phase1_trials: usize,
    pub phase2_trials: usize,
    pub seed: u64,
}

impl Default for TuningSection {
    fn default() -> Self {
        TuningSection {
            phase1_trials: crate::hyperopt::DEFAULT_PHASE1_TRIALS,
            phase2_trials: crate::hyperopt::DEFAULT_PHASE2_TRIALS,
            seed: 1,
        }
    }
}

/// The declarative pipeline configuration, read from a TOML file.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PipelineConfig {
    pub grammar: PathBuf,
    pub dataset_dir: PathBuf,
    pub subject: SubjectSpec,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub tokenization: TokenizationSection,
    /// Present ⇒ run the two-phase hyperparameter search before training.
    #[serde(default)]
    pub tuning: Option<TuningSection>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Stage-0 validation: referenced files exist and sections are sane.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !self.grammar.exists() {
            return Err(PipelineError::Config(format!(
                "grammar file {} does not exist",
                self.grammar.display()
            )));
        }
        self.subject.to_put()?;
        if self.generation.pairs == 0 {
            return Err(PipelineError::Config("generation.pairs must be > 0".to_string()));
        }
        if self.generation.min_expansions > self.generation.max_expansions {
            return Err(PipelineError::Config(
                "generation.min_expansions must not exceed max_expansions".to_string(),
            ));
        }
        self.model.validate()?;
        Ok(())
    }
}

/// Consolidated outcome of one pipeline run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PipelineReport {
    pub dataset: PathBuf,
    pub forward_checkpoint: PathBuf,
    pub inverse_checkpoint: PathBuf,
    pub tuning_report: Option<PathBuf>,
    pub forward: EvaluationReport,
    pub inverse: EvaluationReport,
    pub model: ModelConfig,
    pub training: TrainConfig,
}

/// A dataset tokenized and encoded on both sides.
pub struct EncodedDataset {
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub train: Vec<IdPair>,
    pub holdout: Vec<IdPair>,
}

/// Tokenizes every record and encodes it against vocabularies built from
/// the training split only (the holdout must not leak into the vocab).
pub fn encode_dataset(
    dataset: &Dataset,
    train_count: usize,
    section: &TokenizationSection,
) -> Result<EncodedDataset, PipelineError> {
    let mut src_tokens = Vec::with_capacity(dataset.len());
    let mut tgt_tokens = Vec::with_capacity(dataset.len());
    for record in &dataset.records {
        src_tokens.push(mapped_tokenize(&record.input, section.source_format, section.policy)?.tokens);
        tgt_tokens.push(mapped_tokenize(&record.output, section.target_format, section.policy)?.tokens);
    }
    let train_count = train_count.min(dataset.len());
    let src_vocab = build_vocabulary(&src_tokens[..train_count]);
    let tgt_vocab = build_vocabulary(&tgt_tokens[..train_count]);
    let mut pairs: Vec<IdPair> = src_tokens
        .iter()
        .zip(&tgt_tokens)
        .map(|(s, t)| (src_vocab.encode(s), tgt_vocab.encode(t)))
        .collect();
    let holdout = pairs.split_off(train_count);
    Ok(EncodedDataset {
        src_vocab,
        tgt_vocab,
        train: pairs,
        holdout,
    })
}

/// Swaps every pair, turning a forward dataset into the inverse one.
pub fn swap_pairs(pairs: &[IdPair]) -> Vec<IdPair> {
    pairs.iter().map(|(s, t)| (t.clone(), s.clone())).collect()
}

/// Scores greedy decodes of `pairs` sources against their references.
/// `max_len` bounds each decode; `None` applies the 1.25× heuristic.
pub fn evaluate_model(
    model: &Seq2Seq<f32>,
    pairs: &[IdPair],
    max_len: Option<usize>,
) -> Result<EvaluationReport, PipelineError> {
    let mut refs = Vec::with_capacity(pairs.len());
    let mut hyps = Vec::with_capacity(pairs.len());
    for (src, tgt) in pairs {
        let decoded = greedy_decode(model, src, max_len);
        refs.push(tgt.iter().map(|id| id.to_string()).collect::<Vec<_>>());
        hyps.push(
            decoded
                .tokens
                .iter()
                .filter(|&&id| id != EOS_ID)
                .map(|id| id.to_string())
                .collect::<Vec<_>>(),
        );
    }
    Ok(evaluate(&refs, &hyps)?)
}

fn load_grammar(cfg: &PipelineConfig) -> Result<Grammar, PipelineError> {
    let text = std::fs::read_to_string(&cfg.grammar)?;
    Ok(parse_bnf(&text)?)
}

fn generator_config(grammar: &Grammar, section: &GenerationSection) -> GeneratorConfig {
    let mut gcfg = GeneratorConfig::for_grammar(grammar);
    gcfg.min_expansions = section.min_expansions;
    gcfg.max_expansions = section.max_expansions;
    gcfg.master_seed = section.seed;
    gcfg.refiner = section.refiner.clone();
    gcfg
}

/// Runs the whole pipeline. Completed stages (detected by their artifacts)
/// are skipped, so re-running after an interruption resumes.
pub fn pipeline_run(cfg: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    cfg.validate().map_err(|e| at("validate", e))?;
    std::fs::create_dir_all(&cfg.dataset_dir)?;
    let dataset_path = cfg.dataset_dir.join("dataset.jsonl");
    let forward_ckpt = cfg.dataset_dir.join("forward.ckpt");
    let inverse_ckpt = cfg.dataset_dir.join("inverse.ckpt");
    let tuning_path = cfg.dataset_dir.join("tuning.json");
    let report_path = cfg.dataset_dir.join("report.json");

    // Stage 1: generate + collect.
    if !dataset_path.exists() {
        let grammar = load_grammar(cfg).map_err(|e| at("collect", e))?;
        let gcfg = generator_config(&grammar, &cfg.generation);
        let put = cfg.subject.to_put()?;
        let total = cfg.generation.pairs + cfg.generation.holdout;
        collect_pairs(&grammar, &gcfg, &put, total, &dataset_path)
            .map_err(|e| at("collect", e))?;
    }
    let dataset = Dataset::load(&dataset_path).map_err(|e| at("collect", e))?;

    // Stage 2: tokenize + encode (recomputed deterministically; cheap).
    let encoded = encode_dataset(&dataset, cfg.generation.pairs, &cfg.tokenization)
        .map_err(|e| at("tokenize", e))?;

    // Stage 3: optional hyperparameter search.
    let mut model_cfg = cfg.model.clone();
    let mut train_cfg = cfg.training.clone();
    if let Some(tuning) = &cfg.tuning {
        if tuning_path.exists() {
            let text = std::fs::read_to_string(&tuning_path)?;
            let (m, t): (ModelConfig, TrainConfig) = serde_json::from_str(&text)
                .map_err(|e| at("tune", PipelineError::Config(e.to_string())))?;
            model_cfg = m;
            train_cfg = t;
        } else {
            let mut report = SearchReport::default();
            let space = SearchSpace::default();
            let best = search_model_params(
                &space,
                &encoded.train,
                encoded.src_vocab.len(),
                encoded.tgt_vocab.len(),
                tuning.phase1_trials,
                tuning.seed,
                &mut report,
            )
            .map_err(|e| at("tune", e))?;
            let best_train = search_learning_rate(
                &best,
                &space,
                &encoded.train,
                encoded.src_vocab.len(),
                encoded.tgt_vocab.len(),
                tuning.phase2_trials,
                tuning.seed,
                &mut report,
            )
            .map_err(|e| at("tune", e))?;
            model_cfg = best;
            train_cfg = TrainConfig {
                epochs: cfg.training.epochs,
                ..best_train
            };
            std::fs::write(
                cfg.dataset_dir.join("tuning_trials.json"),
                serde_json::to_string_pretty(&report).unwrap(),
            )?;
            std::fs::write(
                &tuning_path,
                serde_json::to_string_pretty(&(&model_cfg, &train_cfg)).unwrap(),
            )?;
        }
    }

    // Stages 4 and 5: train forward and inverse models.
    if !forward_ckpt.exists() {
        let mut model: Seq2Seq<f32> = Seq2Seq::init(
            model_cfg.clone(),
            encoded.src_vocab.len(),
            encoded.tgt_vocab.len(),
            train_cfg.seed,
        )
        .map_err(|e| at("train-forward", e))?;
        let history =
            train(&mut model, &encoded.train, &train_cfg).map_err(|e| at("train-forward", e))?;
        save_checkpoint(
            &mut model,
            &encoded.src_vocab,
            &encoded.tgt_vocab,
            &history,
            &forward_ckpt,
        )
        .map_err(|e| at("train-forward", e))?;
    }
    if !inverse_ckpt.exists() {
        let swapped = swap_pairs(&encoded.train);
        let mut model: Seq2Seq<f32> = Seq2Seq::init(
            model_cfg.clone(),
            encoded.tgt_vocab.len(),
            encoded.src_vocab.len(),
            train_cfg.seed,
        )
        .map_err(|e| at("train-inverse", e))?;
        let history =
            train(&mut model, &swapped, &train_cfg).map_err(|e| at("train-inverse", e))?;
        save_checkpoint(
            &mut model,
            &encoded.tgt_vocab,
            &encoded.src_vocab,
            &history,
            &inverse_ckpt,
        )
        .map_err(|e| at("train-inverse", e))?;
    }

    // Stage 6: evaluate both directions on the holdout.
    let max_len = Some(model_cfg.context_window);
    let forward_model = load_checkpoint::<f32>(&forward_ckpt)
        .map_err(|e| at("evaluate", e))?
        .model;
    let forward_report = evaluate_model(&forward_model, &encoded.holdout, max_len)
        .map_err(|e| at("evaluate", e))?;
    let inverse_model = load_checkpoint::<f32>(&inverse_ckpt)
        .map_err(|e| at("evaluate", e))?
        .model;
    let inverse_report = evaluate_model(&inverse_model, &swap_pairs(&encoded.holdout), max_len)
        .map_err(|e| at("evaluate", e))?;

    let report = PipelineReport {
        dataset: dataset_path,
        forward_checkpoint: forward_ckpt,
        inverse_checkpoint: inverse_ckpt,
        tuning_report: cfg.tuning.as_ref().map(|_| tuning_path),
        forward: forward_report,
        inverse: inverse_report,
        model: model_cfg,
        training: train_cfg,
    };
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).unwrap(),
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_config(dir: &Path) -> PipelineConfig {
        PipelineConfig {
            grammar: PathBuf::from("grammars/markdown.bnf"),
            dataset_dir: dir.to_path_buf(),
            subject: SubjectSpec {
                builtin: true,
                command: Vec::new(),
                timeout_ms: default_timeout_ms(),
            },
            generation: GenerationSection {
                pairs: 60,
                holdout: 10,
                min_expansions: 10,
                max_expansions: 20,
                seed: 5,
                refiner: None,
            },
            tokenization: TokenizationSection::default(),
            tuning: None,
            model: ModelConfig {
                embedding_size: 32,
                feedforward_size: 64,
                attention_heads: 4,
                ..ModelConfig::default()
            },
            training: TrainConfig {
                learning_rate: 3e-3,
                epochs: 8,
                seed: 9,
                validation_fraction: 0.1,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let text = r#"
            grammar = "grammars/markdown.bnf"
            dataset_dir = "out"

            [subject]
            builtin = true

            [generation]
            pairs = 100
            holdout = 20

            [tokenization]
            policy = "exhaustive"
            source_format = "markdown"
            target_format = "html"
        "#;
        let cfg = PipelineConfig::from_toml(text).unwrap();
        assert_eq!(cfg.generation.pairs, 100);
        assert_eq!(cfg.generation.min_expansions, 10);
        assert_eq!(cfg.tokenization.policy, MaskPolicy::Exhaustive);
        assert!(cfg.tuning.is_none());
        assert_eq!(cfg.model, ModelConfig::default());
    }

    #[test]
    fn missing_grammar_fails_stage_zero() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = demo_config(dir.path());
        cfg.grammar = PathBuf::from("no/such/grammar.bnf");
        let err = pipeline_run(&cfg).unwrap_err();
        assert!(matches!(
            err,
            PipelineError::Stage {
                stage: "validate",
                ..
            }
        ));
    }

    #[test]
    fn swap_is_involutive() {
        let pairs = vec![(vec![1, 2], vec![3]), (vec![4], vec![5, 6])];
        assert_eq!(swap_pairs(&swap_pairs(&pairs)), pairs);
    }

    #[test]
    fn small_pipeline_completes_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = demo_config(dir.path());
        let report = pipeline_run(&cfg).unwrap();
        assert!(report.forward_checkpoint.exists());
        assert!(report.inverse_checkpoint.exists());
        assert_eq!(report.forward.sample_count, 10);

        // Resumption: artifacts exist, so a second run skips generation and
        // training and reproduces the same evaluation.
        let modified = std::fs::metadata(&report.forward_checkpoint)
            .unwrap()
            .modified()
            .unwrap();
        let again = pipeline_run(&cfg).unwrap();
        let modified_again = std::fs::metadata(&again.forward_checkpoint)
            .unwrap()
            .modified()
            .unwrap();
        assert_eq!(modified, modified_again, "checkpoint was rewritten");
        assert_eq!(report.forward.bleu, again.forward.bleu);
    }
}

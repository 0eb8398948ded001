//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 failure of the
//! program under test.

use clap::{Args, Parser, Subcommand};
use modelizer::deploy::{DeploymentSession, InverseVerdict, Mode};
use modelizer::generate::{
    collect_pairs, synthesize_unique, Dataset, GenerateError, GeneratorConfig, HashStore, Put,
};
use modelizer::grammar::parse_bnf;
use modelizer::hyperopt::{search_learning_rate, search_model_params, SearchReport, SearchSpace};
use modelizer::model::{
    load_checkpoint, save_checkpoint, train, ModelConfig, Schedule, Seq2Seq, TrainConfig,
};
use modelizer::pipeline::{
    encode_dataset, evaluate_model, pipeline_run, swap_pairs, PipelineConfig, PipelineError,
    TokenizationSection,
};
use modelizer::subject::builtin_convert;
use modelizer::tokenize::{mapped_tokenize, Format, MaskPolicy};
use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(
    name = "modelizer",
    version,
    about = "Learns reversible input/output behavior models of black-box programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FormatArgs {
    /// Tokenizer format of the program's input side.
    #[arg(long, default_value = "markdown")]
    source_format: Format,
    /// Tokenizer format of the program's output side.
    #[arg(long, default_value = "html")]
    target_format: Format,
    /// Placeholder masking policy.
    #[arg(long, default_value = "optimizing")]
    policy: MaskPolicy,
}

impl FormatArgs {
    fn section(&self) -> TokenizationSection {
        TokenizationSection {
            policy: self.policy,
            source_format: self.source_format,
            target_format: self.target_format,
        }
    }
}

#[derive(Args, Clone)]
struct PutArgs {
    /// Use the builtin Markdown-to-HTML converter as the program under test.
    #[arg(long, conflicts_with = "put")]
    builtin: bool,
    /// External program under test; input is piped to stdin.
    #[arg(long, num_args = 1.., value_name = "CMD")]
    put: Vec<String>,
    /// Timeout for each external invocation, in milliseconds.
    #[arg(long, default_value_t = 10_000)]
    put_timeout_ms: u64,
}

impl PutArgs {
    fn to_put(&self) -> Result<Put, CliError> {
        if self.builtin {
            Ok(Put::Builtin)
        } else if !self.put.is_empty() {
            Ok(Put::Command {
                argv: self.put.clone(),
                timeout: Duration::from_millis(self.put_timeout_ms),
            })
        } else {
            Err(CliError::Usage(
                "pass either --builtin or --put CMD...".to_string(),
            ))
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize unique inputs from a grammar (no program execution).
    Generate {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long)]
        count: usize,
        /// Output JSONL file (one sample record per line).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        min_expansions: usize,
        #[arg(long, default_value_t = 20)]
        max_expansions: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Optional semantic refiner (e.g. "sql-join").
        #[arg(long)]
        refiner: Option<String>,
    },
    /// Synthesize inputs, run the program under test, persist the pairs.
    Collect {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        min_expansions: usize,
        #[arg(long, default_value_t = 20)]
        max_expansions: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        refiner: Option<String>,
        #[command(flatten)]
        put: PutArgs,
    },
    /// Tokenize one document and print tokens, map, and layout as JSON.
    Tokenize {
        /// Input file; `-` reads stdin.
        #[arg(long = "in", default_value = "-")]
        input: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: Format,
        #[arg(long, default_value = "optimizing")]
        policy: MaskPolicy,
    },
    /// Two-phase hyperparameter search over a collected dataset.
    Tune {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 25)]
        phase1_trials: usize,
        #[arg(long, default_value_t = 10)]
        phase2_trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// JSON report listing every trial.
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        formats: FormatArgs,
    },
    /// Train a model on a collected dataset and write a checkpoint.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "forward")]
        direction: Mode,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        learning_rate: f64,
        #[arg(long, default_value_t = 1e-4)]
        weight_decay: f64,
        #[arg(long, default_value = "cosine")]
        schedule: Schedule,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        encoder_layers: usize,
        #[arg(long, default_value_t = 1)]
        decoder_layers: usize,
        #[arg(long, default_value_t = 64)]
        embedding_size: usize,
        #[arg(long, default_value_t = 256)]
        feedforward_size: usize,
        #[arg(long, default_value_t = 4)]
        attention_heads: usize,
        #[command(flatten)]
        formats: FormatArgs,
    },
    /// Evaluate a checkpoint against a collected dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "forward")]
        direction: Mode,
        /// Cap decoded length; omit for the 1.25x input-length heuristic.
        #[arg(long)]
        max_len: Option<usize>,
        #[command(flatten)]
        formats: FormatArgs,
    },
    /// Predict for one document through the four-phase pipeline.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "forward")]
        mode: Mode,
        /// Input file; `-` reads stdin.
        #[arg(long = "in", default_value = "-")]
        input: PathBuf,
        #[arg(long)]
        max_len: Option<usize>,
        /// Validate the prediction against the program under test.
        #[arg(long)]
        validate: bool,
        /// Write a phase-labelled trace file.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        formats: FormatArgs,
        #[command(flatten)]
        put: PutArgs,
    },
    /// Run the whole pipeline from a declarative TOML config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Convert Markdown-subset text to HTML with the builtin subject.
    SubjectConvert {
        /// Input file; `-` reads stdin.
        #[arg(long = "in", default_value = "-")]
        input: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Subject(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            // The builtin subject's contract: out-of-subset input exits 1
            // with a position diagnostic.
            CliError::Subject(_) => 1,
            CliError::Pipeline(e) => pipeline_exit_code(e),
            CliError::Io(_) | CliError::Data(_) => 2,
        }
    }
}

fn pipeline_exit_code(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Stage { source, .. } => pipeline_exit_code(source),
        PipelineError::Generate(
            GenerateError::PutFailure { .. } | GenerateError::PutTimeout(_),
        ) => 3,
        _ => 2,
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn read_input(path: &PathBuf) -> Result<String, CliError> {
    if path.as_os_str() == "-" {
        let mut buf = String::new();
        std::io::stdin().read_to_string(&mut buf)?;
        Ok(buf)
    } else {
        Ok(std::fs::read_to_string(path)?)
    }
}

fn load_grammar(path: &PathBuf) -> Result<modelizer::grammar::Grammar, CliError> {
    let text = std::fs::read_to_string(path)?;
    parse_bnf(&text).map_err(data)
}

fn generator_config(
    grammar: &modelizer::grammar::Grammar,
    min_expansions: usize,
    max_expansions: usize,
    seed: u64,
    refiner: Option<String>,
) -> GeneratorConfig {
    let mut cfg = GeneratorConfig::for_grammar(grammar);
    cfg.min_expansions = min_expansions;
    cfg.max_expansions = max_expansions;
    cfg.master_seed = seed;
    cfg.refiner = refiner;
    cfg
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            grammar,
            count,
            out,
            min_expansions,
            max_expansions,
            seed,
            refiner,
        } => {
            let grammar = load_grammar(&grammar)?;
            let cfg = generator_config(&grammar, min_expansions, max_expansions, seed, refiner);
            let store = HashStore::in_memory();
            let outcome = synthesize_unique(&grammar, &cfg, count, &store).map_err(data)?;
            let mut lines = String::new();
            for sample in &outcome.samples {
                lines.push_str(&serde_json::to_string(sample).unwrap());
                lines.push('\n');
            }
            std::fs::write(&out, lines)?;
            println!(
                "generated {} unique samples ({} escalations) -> {}",
                outcome.samples.len(),
                outcome.escalations,
                out.display()
            );
            Ok(())
        }
        Command::Collect {
            grammar,
            count,
            out,
            min_expansions,
            max_expansions,
            seed,
            refiner,
            put,
        } => {
            let grammar = load_grammar(&grammar)?;
            let cfg = generator_config(&grammar, min_expansions, max_expansions, seed, refiner);
            let put = put.to_put()?;
            let summary = collect_pairs(&grammar, &cfg, &put, count, &out)
                .map_err(|e| CliError::Pipeline(e.into()))?;
            println!(
                "persisted {}/{} pairs ({} PUT rejections, {} escalations) -> {}",
                summary.persisted,
                summary.requested,
                summary.put_failures,
                summary.escalations,
                out.display()
            );
            Ok(())
        }
        Command::Tokenize {
            input,
            format,
            policy,
        } => {
            let text = read_input(&input)?;
            let mapped = mapped_tokenize(&text, format, policy).map_err(data)?;
            let doc = serde_json::json!({
                "tokens": mapped.tokens,
                "map": mapped.map.entries,
                "layout": mapped.layout.gaps,
            });
            println!("{}", serde_json::to_string_pretty(&doc).unwrap());
            Ok(())
        }
        Command::Tune {
            dataset,
            phase1_trials,
            phase2_trials,
            seed,
            report,
            formats,
        } => {
            let ds = Dataset::load(&dataset).map_err(data)?;
            let encoded =
                encode_dataset(&ds, ds.len(), &formats.section()).map_err(CliError::Pipeline)?;
            let space = SearchSpace::default();
            let mut trials = SearchReport::default();
            let best = search_model_params(
                &space,
                &encoded.train,
                encoded.src_vocab.len(),
                encoded.tgt_vocab.len(),
                phase1_trials,
                seed,
                &mut trials,
            )
            .map_err(data)?;
            let best_train = search_learning_rate(
                &best,
                &space,
                &encoded.train,
                encoded.src_vocab.len(),
                encoded.tgt_vocab.len(),
                phase2_trials,
                seed,
                &mut trials,
            )
            .map_err(data)?;
            let doc = serde_json::json!({
                "best_model": best,
                "best_training": best_train,
                "trials": trials,
            });
            std::fs::write(&report, serde_json::to_string_pretty(&doc).unwrap())?;
            println!("search report -> {}", report.display());
            Ok(())
        }
        Command::Train {
            dataset,
            out,
            direction,
            epochs,
            learning_rate,
            weight_decay,
            schedule,
            batch_size,
            seed,
            encoder_layers,
            decoder_layers,
            embedding_size,
            feedforward_size,
            attention_heads,
            formats,
        } => {
            let ds = Dataset::load(&dataset).map_err(data)?;
            let encoded =
                encode_dataset(&ds, ds.len(), &formats.section()).map_err(CliError::Pipeline)?;
            let (pairs, src_vocab, tgt_vocab) = match direction {
                Mode::Forward => (
                    encoded.train.clone(),
                    encoded.src_vocab,
                    encoded.tgt_vocab,
                ),
                Mode::Inverse => (
                    swap_pairs(&encoded.train),
                    encoded.tgt_vocab,
                    encoded.src_vocab,
                ),
            };
            let mcfg = ModelConfig {
                encoder_layers,
                decoder_layers,
                embedding_size,
                feedforward_size,
                attention_heads,
                ..ModelConfig::default()
            };
            let tcfg = TrainConfig {
                learning_rate,
                weight_decay,
                schedule,
                epochs,
                batch_size,
                seed,
                ..TrainConfig::default()
            };
            let mut model: Seq2Seq<f32> =
                Seq2Seq::init(mcfg, src_vocab.len(), tgt_vocab.len(), seed).map_err(data)?;
            let history = train(&mut model, &pairs, &tcfg).map_err(data)?;
            save_checkpoint(&mut model, &src_vocab, &tgt_vocab, &history, &out).map_err(data)?;
            let last = history.validation.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {} epochs (final validation loss {last:.4}) -> {}",
                history.train.len(),
                out.display()
            );
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            direction,
            max_len,
            formats,
        } => {
            let ds = Dataset::load(&dataset).map_err(data)?;
            let encoded =
                encode_dataset(&ds, ds.len(), &formats.section()).map_err(CliError::Pipeline)?;
            let pairs = match direction {
                Mode::Forward => encoded.train,
                Mode::Inverse => swap_pairs(&encoded.train),
            };
            let ckpt = load_checkpoint::<f32>(&checkpoint).map_err(data)?;
            let report = evaluate_model(&ckpt.model, &pairs, max_len).map_err(CliError::Pipeline)?;
            println!("{}", report.to_text());
            Ok(())
        }
        Command::Predict {
            checkpoint,
            mode,
            input,
            max_len,
            validate,
            trace,
            formats,
            put,
        } => {
            let put = if validate { Some(put.to_put()?) } else { None };
            let (source_format, target_format) = match mode {
                Mode::Forward => (formats.source_format, formats.target_format),
                Mode::Inverse => (formats.target_format, formats.source_format),
            };
            let session = DeploymentSession::load(
                &checkpoint,
                source_format,
                target_format,
                formats.policy,
                mode,
                put,
                max_len,
            )
            .map_err(data)?;
            let text = read_input(&input)?;
            let (predicted, prediction_trace) = session.predict(&text).map_err(data)?;
            print!("{predicted}");
            if !predicted.ends_with('\n') {
                println!();
            }
            if let Some(path) = trace {
                let mut out = String::new();
                out.push_str("phase 1: input tokens\n");
                out.push_str(&format!("{:?}\n", prediction_trace.input_tokens));
                out.push_str("phase 2: predicted ids\n");
                out.push_str(&format!("{:?}\n", prediction_trace.predicted_ids));
                out.push_str("phase 3: predicted tokens\n");
                out.push_str(&format!("{:?}\n", prediction_trace.predicted_tokens));
                out.push_str(&format!(
                    "phase 4: reconstructed ({} unbound, truncated: {})\n",
                    prediction_trace.unbound.len(),
                    prediction_trace.truncated
                ));
                std::fs::write(&path, out)?;
            }
            if validate {
                match mode {
                    Mode::Forward => {
                        let report = session.validate_forward(&text, &predicted).map_err(data)?;
                        eprintln!("{}", report.to_text());
                    }
                    Mode::Inverse => {
                        match session.validate_inverse(&text, &predicted).map_err(data)? {
                            InverseVerdict::Accepted(report) => eprintln!("{}", report.to_text()),
                            InverseVerdict::Rejected { reason } => {
                                return Err(CliError::Data(format!(
                                    "predicted input rejected by the program under test: {reason}"
                                )))
                            }
                        }
                    }
                }
            }
            Ok(())
        }
        Command::Pipeline { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let report = pipeline_run(&cfg)?;
            println!("forward:\n{}", report.forward.to_text());
            println!("inverse:\n{}", report.inverse.to_text());
            println!(
                "checkpoints: {} / {}",
                report.forward_checkpoint.display(),
                report.inverse_checkpoint.display()
            );
            Ok(())
        }
        Command::SubjectConvert { input } => {
            let text = read_input(&input)?;
            let html = builtin_convert(&text).map_err(|e| CliError::Subject(e.to_string()))?;
            print!("{html}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

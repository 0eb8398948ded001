//! modelizer — learns a reversible input/output behavior model of a
//! black-box program.
//!
//! The toolkit synthesizes inputs from a context-free grammar, executes the
//! program under test, tokenizes both sides with content-masking
//! placeholders, trains a compact sequence-to-sequence translation model
//! (forward and inverse), and validates predictions against the program
//! with a standard machine-translation metrics suite.

pub mod deploy;
pub mod generate;
pub mod grammar;
pub mod hyperopt;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod subject;
pub mod tokenize;

pub use deploy::{DeployError, DeploymentSession, InverseVerdict, Mode, Trace, UNK_SENTINEL};
pub use generate::{
    augment_placeholders, collect_pairs, distribute_budget, refine_semantics, run_put,
    sample_digest, synthesize_unique, Dataset, GenerateError, GeneratedSample, GeneratorConfig,
    HashStore, Put, SampleRecord,
};
pub use grammar::{earley_parse, expand, parse_bnf, tree_to_string, validate_grammar};
pub use grammar::{Alternative, DerivationTree, Grammar, GrammarError, Symbol};
pub use hyperopt::{
    search_learning_rate, search_model_params, HyperoptError, SearchReport, SearchSpace,
    TrialResult,
};
pub use model::{
    fine_tune, greedy_decode, load_checkpoint, save_checkpoint, train, Model, ModelConfig,
    ModelError, ModelF64, Schedule, Seq2Seq, TrainConfig,
};
pub use metrics::{
    bleu_std_error, corpus_bleu, evaluate, levenshtein, match_rates, nist_score, sentence_bleu,
    wer, wil, EvaluationReport, MetricsError,
};
pub use pipeline::{
    encode_dataset, evaluate_model, pipeline_run, swap_pairs, EncodedDataset, PipelineConfig,
    PipelineError, PipelineReport,
};
pub use subject::{builtin_convert, ConvertError};
pub use tokenize::{
    build_vocabulary, mapped_tokenize, reconstruct, subword_train, Format, Instantiation, Layout,
    MappedText, MaskPolicy, PlaceholderMap, SubwordTokenizer, TokenSequence, TokenizeError,
    Vocabulary,
};

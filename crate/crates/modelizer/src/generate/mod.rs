//! Grammar-based input synthesis: placeholder augmentation, semantic
//! refinement, uniqueness hashing, and budgeted parallel generation with
//! expansion-bound escalation.

mod dataset;
mod store;

pub use dataset::{collect_pairs, run_put, CollectionSummary, Dataset, Put, SampleRecord};
pub use store::{sample_digest, HashStore};

use crate::grammar::{expand, tree_to_string, Grammar, GrammarError};
use regex::Regex;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("unknown semantic refiner {0:?}")]
    RefinerUnknown(String),
    #[error("grammar exhausted after {escalations} bound escalations")]
    GrammarExhausted { escalations: usize },
    #[error("program under test failed (exit code {exit_code:?}): {stderr}")]
    PutFailure {
        exit_code: Option<i32>,
        stderr: String,
    },
    #[error("program under test timed out after {0:?}")]
    PutTimeout(std::time::Duration),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed dataset record: {0}")]
    MalformedRecord(String),
}

/// Knobs for [`synthesize_unique`] and [`collect_pairs`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GeneratorConfig {
    pub min_expansions: usize,
    pub max_expansions: usize,
    /// Consecutive duplicate/failed attempts tolerated before the bounds
    /// are escalated.
    pub attempts_per_config: usize,
    pub escalation_step: usize,
    /// Advance the bounds through at least four configurations over the
    /// run, producing samples of increasing complexity.
    pub sliding_window: bool,
    pub worker_count: usize,
    pub batch_size: usize,
    pub master_seed: u64,
    /// Named semantic refiner applied to every sample (e.g. `sql-join`).
    pub refiner: Option<String>,
    /// Placeholder names to augment, in grammar declaration order.
    pub placeholders: Vec<String>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            min_expansions: 10,
            max_expansions: 20,
            attempts_per_config: 100_000,
            escalation_step: 10,
            sliding_window: false,
            worker_count: 1,
            batch_size: 64,
            master_seed: 0,
            refiner: None,
            placeholders: Vec::new(),
        }
    }
}

impl GeneratorConfig {
    /// Escalations allowed before giving up with `GrammarExhausted`.
    pub const ESCALATION_CEILING: usize = 10;

    pub fn for_grammar(grammar: &Grammar) -> Self {
        GeneratorConfig {
            placeholders: grammar.placeholders.iter().cloned().collect(),
            ..Default::default()
        }
    }
}

/// One synthesized, augmented, refined input and its provenance.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GeneratedSample {
    pub text: String,
    pub digest: String,
    pub bounds: (usize, usize),
    pub seed: u64,
}

/// The result of one synthesis run.
#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub samples: Vec<GeneratedSample>,
    pub escalations: usize,
}

/// Rewrites each standalone placeholder occurrence to `NAME_k`, with a
/// 1-based per-name counter advancing left to right. Stripping the `_k`
/// suffixes recovers the original string.
pub fn augment_placeholders(s: &str, placeholders: &[String]) -> String {
    if placeholders.is_empty() {
        return s.to_string();
    }
    let alternation = placeholders
        .iter()
        .map(|n| regex::escape(n))
        .collect::<Vec<_>>()
        .join("|");
    let re = Regex::new(&format!(r"\b(?:{alternation})\b")).unwrap();
    let mut counters: HashMap<&str, usize> = HashMap::new();
    let mut out = String::with_capacity(s.len());
    let mut last = 0;
    for m in re.find_iter(s) {
        out.push_str(&s[last..m.start()]);
        let count = counters.entry(m.as_str()).or_insert(0);
        *count += 1;
        out.push_str(&format!("{}_{}", m.as_str(), count));
        last = m.end();
    }
    out.push_str(&s[last..]);
    out
}

/// Applies a named identifier-consistency rewrite. `None` is the identity.
pub fn refine_semantics(s: &str, refiner: Option<&str>) -> Result<String, GenerateError> {
    match refiner {
        None => Ok(s.to_string()),
        Some("sql-join") => Ok(refine_sql_join(s)),
        Some(other) => Err(GenerateError::RefinerUnknown(other.to_string())),
    }
}

/// Re-binds the table identifiers in a `JOIN ... ON` condition so that the
/// first reference names the FROM table and the second the JOIN table —
/// the deterministic choice for making a synthesized join well-formed.
fn refine_sql_join(s: &str) -> String {
    let re = Regex::new(
        r"FROM\s+(\w+)\s+JOIN\s+(\w+)\s+ON\s+(\w+)(\.\w+\s*=\s*)(\w+)(\.\w+)",
    )
    .unwrap();
    re.replace_all(s, |caps: &regex::Captures| {
        format!(
            "FROM {} JOIN {} ON {}{}{}{}",
            &caps[1], &caps[2], &caps[1], &caps[4], &caps[2], &caps[6]
        )
    })
    .into_owned()
}

/// Splits `total` into `workers` near-equal shares (difference ≤ 1), the
/// remainder going to the earliest workers.
pub fn distribute_budget(total: usize, workers: usize) -> Vec<usize> {
    assert!(workers >= 1, "workers must be >= 1");
    let base = total / workers;
    let rem = total % workers;
    (0..workers).map(|w| base + usize::from(w < rem)).collect()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Synthesizes exactly `n` unique inputs. Every returned sample is
/// placeholder-augmented and refined; its digest was absent from `store`
/// before the call and is present after. When `attempts_per_config`
/// consecutive attempts yield nothing new, both bounds are raised by
/// `escalation_step`; after [`GeneratorConfig::ESCALATION_CEILING`]
/// escalations the run fails with `GrammarExhausted`.
pub fn synthesize_unique(
    grammar: &Grammar,
    cfg: &GeneratorConfig,
    n: usize,
    store: &HashStore,
) -> Result<SynthesisOutcome, GenerateError> {
    let budgets = distribute_budget(n, cfg.worker_count);
    let mut samples = Vec::with_capacity(n);
    let mut escalations = 0usize;
    for (worker, &budget) in budgets.iter().enumerate() {
        let outcome = worker_synthesize(grammar, cfg, budget, store, worker as u64)?;
        samples.extend(outcome.samples);
        escalations += outcome.escalations;
    }
    Ok(SynthesisOutcome {
        samples,
        escalations,
    })
}

fn worker_synthesize(
    grammar: &Grammar,
    cfg: &GeneratorConfig,
    budget: usize,
    store: &HashStore,
    worker: u64,
) -> Result<SynthesisOutcome, GenerateError> {
    let mut samples = Vec::with_capacity(budget);
    let mut lo = cfg.min_expansions;
    let mut hi = cfg.max_expansions;
    let mut escalations = 0usize;
    let mut failures = 0usize;
    let mut counter = 0u64;
    // Sliding window: advance the bounds at fixed milestones so the run
    // covers at least four configurations.
    let window_chunk = if cfg.sliding_window {
        budget.div_ceil(4).max(1)
    } else {
        usize::MAX
    };
    let mut next_advance = window_chunk;

    while samples.len() < budget {
        let seed = splitmix64(cfg.master_seed ^ splitmix64(worker.wrapping_add(1)))
            .wrapping_add(counter);
        counter += 1;
        let produced = match expand(grammar, seed, lo, hi) {
            Ok(tree) => {
                let text = tree_to_string(&tree)?;
                let augmented = augment_placeholders(&text, &cfg.placeholders);
                let refined = refine_semantics(&augmented, cfg.refiner.as_deref())?;
                let digest = sample_digest(&refined);
                if store.insert(&digest) {
                    samples.push(GeneratedSample {
                        text: refined,
                        digest,
                        bounds: (lo, hi),
                        seed,
                    });
                    true
                } else {
                    false
                }
            }
            Err(GrammarError::BudgetInfeasible { .. }) => false,
            Err(other) => return Err(other.into()),
        };
        if produced {
            failures = 0;
            if samples.len() >= next_advance && samples.len() < budget {
                lo += cfg.escalation_step;
                hi += cfg.escalation_step;
                next_advance += window_chunk;
            }
        } else {
            failures += 1;
            if failures >= cfg.attempts_per_config {
                escalations += 1;
                if escalations > GeneratorConfig::ESCALATION_CEILING {
                    return Err(GenerateError::GrammarExhausted { escalations });
                }
                lo += cfg.escalation_step;
                hi += cfg.escalation_step;
                failures = 0;
            }
        }
    }
    Ok(SynthesisOutcome {
        samples,
        escalations,
    })
}

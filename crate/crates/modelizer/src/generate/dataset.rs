//! Program-under-test execution and input/output pair collection.

use super::{synthesize_unique, GenerateError, GeneratorConfig, HashStore};
use crate::grammar::Grammar;
use crate::subject::builtin_convert;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

/// One persisted input/output pair with provenance.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SampleRecord {
    pub input: String,
    pub output: String,
    pub hash: String,
    pub bounds: (usize, usize),
    pub seed: u64,
}

/// A line-delimited dataset of [`SampleRecord`]s, one JSON record per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<(), GenerateError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for record in &self.records {
            let line = serde_json::to_string(record)
                .map_err(|e| GenerateError::MalformedRecord(e.to_string()))?;
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GenerateError> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut records = Vec::new();
        for line in f.lines() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line)
                    .map_err(|e| GenerateError::MalformedRecord(e.to_string()))?,
            );
        }
        Ok(Dataset { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// The program under test: either the builtin converter (in-process) or an
/// external command fed on standard input.
#[derive(Debug, Clone)]
pub enum Put {
    Builtin,
    Command {
        argv: Vec<String>,
        timeout: Duration,
    },
}

impl Put {
    pub fn run(&self, input: &str) -> Result<String, GenerateError> {
        match self {
            Put::Builtin => builtin_convert(input).map_err(|e| GenerateError::PutFailure {
                exit_code: Some(1),
                stderr: e.to_string(),
            }),
            Put::Command { argv, timeout } => run_put(argv, input, *timeout),
        }
    }
}

/// Runs `command`, writing `input` to its standard input; returns captured
/// standard output when the process exits 0 within `timeout`.
pub fn run_put(
    command: &[String],
    input: &str,
    timeout: Duration,
) -> Result<String, GenerateError> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| GenerateError::MalformedRecord("empty PUT command".to_string()))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;

    let mut stdin = child.stdin.take().expect("stdin piped");
    let input_owned = input.as_bytes().to_vec();
    let writer = std::thread::spawn(move || {
        // A PUT that closes stdin early is not an error by itself.
        let _ = stdin.write_all(&input_owned);
    });

    let deadline = Instant::now() + timeout;
    let status = loop {
        match child.try_wait()? {
            Some(status) => break status,
            None if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                let _ = writer.join();
                return Err(GenerateError::PutTimeout(timeout));
            }
            None => std::thread::sleep(Duration::from_millis(2)),
        }
    };
    let _ = writer.join();

    let mut stdout = String::new();
    let mut stderr = String::new();
    use std::io::Read;
    if let Some(mut s) = child.stdout.take() {
        let _ = s.read_to_string(&mut stdout);
    }
    if let Some(mut s) = child.stderr.take() {
        let _ = s.read_to_string(&mut stderr);
    }
    if status.success() {
        Ok(stdout)
    } else {
        Err(GenerateError::PutFailure {
            exit_code: status.code(),
            stderr,
        })
    }
}

/// Summary of one collection run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CollectionSummary {
    pub requested: usize,
    pub persisted: usize,
    pub put_failures: usize,
    pub escalations: usize,
}

/// Consecutive all-failure synthesis rounds tolerated before collection
/// gives up.
const MAX_FAILED_ROUNDS: usize = 10;

/// Generates unique inputs, runs the PUT on each, and persists the
/// accepted pairs. Inputs the PUT rejects are dropped and replaced.
pub fn collect_pairs(
    grammar: &Grammar,
    cfg: &GeneratorConfig,
    put: &Put,
    n: usize,
    dataset_path: &Path,
) -> Result<CollectionSummary, GenerateError> {
    let store = HashStore::in_memory();
    let mut dataset = Dataset::default();
    let mut put_failures = 0usize;
    let mut escalations = 0usize;
    let mut failed_rounds = 0usize;
    let mut last_put_error: Option<GenerateError> = None;

    while dataset.len() < n {
        let need = n - dataset.len();
        let outcome = synthesize_unique(grammar, cfg, need, &store)?;
        escalations += outcome.escalations;
        let before = dataset.len();
        for sample in outcome.samples {
            match put.run(&sample.text) {
                Ok(output) => dataset.records.push(SampleRecord {
                    input: sample.text,
                    output,
                    hash: sample.digest,
                    bounds: sample.bounds,
                    seed: sample.seed,
                }),
                Err(e @ (GenerateError::PutFailure { .. } | GenerateError::PutTimeout(_))) => {
                    put_failures += 1;
                    last_put_error = Some(e);
                }
                Err(other) => return Err(other),
            }
        }
        if dataset.len() == before {
            failed_rounds += 1;
            if failed_rounds >= MAX_FAILED_ROUNDS {
                // A harness whose PUT rejects everything is a PUT problem,
                // not grammar exhaustion.
                if dataset.is_empty() {
                    if let Some(e) = last_put_error {
                        return Err(e);
                    }
                }
                return Err(GenerateError::GrammarExhausted { escalations });
            }
        } else {
            failed_rounds = 0;
        }
    }

    dataset.save(dataset_path)?;
    Ok(CollectionSummary {
        requested: n,
        persisted: dataset.len(),
        put_failures,
        escalations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_bnf;

    fn markdown_grammar() -> Grammar {
        parse_bnf(include_str!("../../grammars/markdown.bnf")).unwrap()
    }

    #[test]
    fn builtin_put_converts() {
        assert_eq!(
            Put::Builtin.run("**TEXT_1**\n").unwrap(),
            "<p><strong>TEXT_1</strong></p>\n"
        );
    }

    #[test]
    fn external_identity_command() {
        let out = run_put(
            &["cat".to_string()],
            "x",
            Duration::from_secs(5),
        )
        .unwrap();
        assert_eq!(out, "x");
    }

    #[test]
    fn nonzero_exit_is_put_failure() {
        let err = run_put(
            &["sh".to_string(), "-c".to_string(), "echo oops >&2; exit 3".to_string()],
            "",
            Duration::from_secs(5),
        )
        .unwrap_err();
        match err {
            GenerateError::PutFailure { exit_code, stderr } => {
                assert_eq!(exit_code, Some(3));
                assert!(stderr.contains("oops"));
            }
            other => panic!("expected PutFailure, got {other}"),
        }
    }

    #[test]
    fn hanging_command_times_out() {
        let err = run_put(
            &["sleep".to_string(), "30".to_string()],
            "",
            Duration::from_millis(100),
        )
        .unwrap_err();
        assert!(matches!(err, GenerateError::PutTimeout(_)));
    }

    #[test]
    fn collection_persists_verifiable_pairs() {
        let g = markdown_grammar();
        let cfg = GeneratorConfig::for_grammar(&g);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        let summary = collect_pairs(&g, &cfg, &Put::Builtin, 50, &path).unwrap();
        assert_eq!(summary.persisted, 50);
        assert_eq!(summary.put_failures, 0);
        let dataset = Dataset::load(&path).unwrap();
        assert_eq!(dataset.len(), 50);
        for record in &dataset.records {
            assert_eq!(Put::Builtin.run(&record.input).unwrap(), record.output);
            assert_eq!(super::super::sample_digest(&record.input), record.hash);
        }
    }

    #[test]
    fn empty_collection_is_empty_dataset() {
        let g = markdown_grammar();
        let cfg = GeneratorConfig::for_grammar(&g);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        let summary = collect_pairs(&g, &cfg, &Put::Builtin, 0, &path).unwrap();
        assert_eq!(summary.persisted, 0);
        assert!(Dataset::load(&path).unwrap().is_empty());
    }

    #[test]
    fn rejecting_put_surfaces_put_failure() {
        let g = parse_bnf("<s> ::= \"a\" | \"b\" | \"c\" <s>\n").unwrap();
        let cfg = GeneratorConfig {
            min_expansions: 1,
            max_expansions: 5,
            attempts_per_config: 20,
            ..Default::default()
        };
        let put = Put::Command {
            argv: vec!["false".to_string()],
            timeout: Duration::from_secs(2),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        match collect_pairs(&g, &cfg, &put, 5, &path) {
            Err(GenerateError::PutFailure { .. }) => {}
            other => panic!("expected PutFailure, got {other:?}"),
        }
    }
}

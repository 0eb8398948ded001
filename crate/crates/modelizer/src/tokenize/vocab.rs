//! Token vocabulary with reserved control ids.

use super::TokenSequence;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

/// Builds a vocabulary over a token corpus. Ids are assigned by descending
/// frequency with lexicographic tie-break, after the four reserved control
/// tokens.
pub fn build_vocabulary(corpus: &[TokenSequence]) -> Vocabulary {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for seq in corpus {
        for token in seq {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens: Vec<String> = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN]
        .iter()
        .map(|s| s.to_string())
        .collect();
    tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
    Vocabulary::from_tokens(tokens)
}

impl Vocabulary {
    /// Rebuilds a vocabulary from an explicit token list (ids by position),
    /// e.g. when restoring from a checkpoint.
    pub fn from_token_list(tokens: Vec<String>) -> Self {
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id for a token; unknown tokens map to [`UNK_ID`].
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK_TOKEN)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// One escaped token per line, reserved tokens first.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for token in &self.tokens {
            writeln!(f, "{}", escape(token))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut tokens = Vec::new();
        for line in f.lines() {
            tokens.push(unescape(&line?));
        }
        Ok(Vocabulary::from_tokens(tokens))
    }
}

fn escape(token: &str) -> String {
    token
        .replace('\\', "\\\\")
        .replace('\n', "\\n")
        .replace('\t', "\\t")
        .replace('\r', "\\r")
}

fn unescape(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('r') => out.push('\r'),
                Some('\\') => out.push('\\'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[&str]) -> TokenSequence {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn frequency_then_lexicographic() {
        let corpus = vec![seq(&["b", "a", "b", "c", "a", "b"])];
        let v = build_vocabulary(&corpus);
        assert_eq!(v.token(PAD_ID), PAD_TOKEN);
        assert_eq!(v.token(UNK_ID), UNK_TOKEN);
        assert_eq!(v.token(4), "b"); // most frequent
        assert_eq!(v.token(5), "a"); // tie with c broken lexicographically
        assert_eq!(v.token(6), "c");
        assert_eq!(v.len(), 7);
    }

    #[test]
    fn unknown_maps_to_unk() {
        let v = build_vocabulary(&[seq(&["x"])]);
        assert_eq!(v.id("nope"), UNK_ID);
        assert_eq!(v.id("x"), 4);
    }

    #[test]
    fn save_and_load_round_trip() {
        let corpus = vec![seq(&["\n", "# ", "TEXT_1", "back\\slash"])];
        let v = build_vocabulary(&corpus);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(v, loaded);
        assert_eq!(loaded.id("\n"), v.id("\n"));
    }
}
